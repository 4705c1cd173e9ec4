use std::collections::BTreeMap;

use autodiff::{BatchStats, Bound, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use super::model::{push_features, Choice, DecodeMode, Worker};
use crate::domain::{backtrack, Instance, SubTourPlan};
use crate::error::Result;
use crate::exec::Exec;
use crate::nn::BnMode;

/// One vehicle's routing task: a subset of an instance's customers.
#[derive(Debug, Clone, Copy)]
pub struct SubJob<'a> {
    pub inst: &'a Instance,
    pub vehicle: usize,
    pub ids: &'a [usize],
}

pub(crate) struct BatchRollout {
    pub plans: Vec<SubTourPlan>,
    /// Decoded tours in customer ids, before backtracking.
    pub tours: Vec<Vec<usize>>,
    pub logprob: Var,
    pub stats: Vec<(String, BatchStats)>,
    pub probs: Vec<Tensor>,
}

/// Greedy or sampled rollouts of equally sized, non-empty jobs on one tape.
pub(crate) fn rollout_batch(
    worker: &Worker,
    tape: &Tape,
    bound: &Bound,
    jobs: &[SubJob<'_>],
    choice: Choice<'_>,
    bn: BnMode,
    keep_probs: bool,
) -> Result<BatchRollout> {
    let k = jobs[0].ids.len();
    debug_assert!(k > 0 && jobs.iter().all(|j| j.ids.len() == k));
    let nodes = k + 1;
    let mut feats = Vec::with_capacity(jobs.len() * nodes * 4);
    for j in jobs {
        push_features(&mut feats, j.inst, j.ids);
    }
    let feats = Tensor::new(vec![jobs.len() * nodes, 4], feats)?;
    let mut stats = Vec::new();
    let enc = worker.encode(tape, bound, feats, jobs.len(), nodes, bn, &mut stats)?;
    let dec = worker.decode(tape, bound, &enc, choice, keep_probs)?;
    let tours: Vec<Vec<usize>> = dec
        .tours
        .iter()
        .zip(jobs)
        .map(|(t, j)| t.iter().map(|&p| j.ids[p]).collect())
        .collect();
    let plans = tours
        .iter()
        .zip(jobs)
        .map(|(t, j)| backtrack(j.inst, j.vehicle, t))
        .collect();
    Ok(BatchRollout {
        plans,
        tours,
        logprob: dec.logprob,
        stats,
        probs: dec.probs,
    })
}

/// Rollout of a single job with eval-mode batch norm. Returns the plan, the
/// log-probability of the decoded tour and the tour itself.
pub fn rollout(
    worker: &Worker,
    job: SubJob<'_>,
    mode: DecodeMode,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(SubTourPlan, f64, Vec<usize>)> {
    if job.ids.is_empty() {
        return Ok((SubTourPlan::empty(job.vehicle), 0.0, Vec::new()));
    }
    let tape = Tape::new();
    let choice = match (mode, rng) {
        (DecodeMode::Sample, Some(r)) => Choice::Sample(std::slice::from_mut(r)),
        (DecodeMode::Sample, None) => {
            return Err(crate::CoreError::Config("sampling requires a random stream".into()));
        }
        (DecodeMode::Greedy, _) => Choice::Greedy,
    };
    let mut r = rollout_batch(worker, &tape, &worker.params.bind(&tape, false), &[job], choice, BnMode::Eval, false)?;
    let lp = tape.value(r.logprob).data()[0];
    Ok((r.plans.remove(0), lp, r.tours.remove(0)))
}

/// Largest number of sub-instances encoded on one tape.
pub const INFERENCE_CHUNK: usize = 256;

/// Greedy eval-mode plans for many jobs. Jobs are grouped by size and
/// batched; the output follows the input order.
pub fn greedy_plans(worker: &Worker, jobs: &[SubJob<'_>], exec: Exec) -> Result<Vec<SubTourPlan>> {
    let mut by_size: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, j) in jobs.iter().enumerate() {
        by_size.entry(j.ids.len()).or_default().push(i);
    }
    let mut chunks: Vec<Vec<usize>> = Vec::new();
    for (size, idx) in by_size {
        if size == 0 {
            chunks.extend(idx.into_iter().map(|i| vec![i]));
        } else {
            chunks.extend(idx.chunks(INFERENCE_CHUNK).map(<[usize]>::to_vec));
        }
    }
    let results = exec.try_map(&chunks, |chunk| -> Result<Vec<SubTourPlan>> {
        let first = jobs[chunk[0]];
        if first.ids.is_empty() {
            return Ok(vec![SubTourPlan::empty(first.vehicle)]);
        }
        let batch: Vec<SubJob<'_>> = chunk.iter().map(|&i| jobs[i]).collect();
        let tape = Tape::new();
        Ok(rollout_batch(worker, &tape, &worker.params.bind(&tape, false), &batch, Choice::Greedy, BnMode::Eval, false)?.plans)
    })?;
    let mut out: Vec<Option<SubTourPlan>> = vec![None; jobs.len()];
    for (chunk, plans) in chunks.iter().zip(results) {
        for (&i, p) in chunk.iter().zip(plans) {
            out[i] = Some(p);
        }
    }
    Ok(out.into_iter().map(|p| p.expect("every job is planned")).collect())
}

/// Per-step probability rows of a greedy decode, for normalisation checks.
pub fn greedy_step_probs(worker: &Worker, job: SubJob<'_>) -> Result<Vec<Vec<f64>>> {
    if job.ids.is_empty() {
        return Ok(Vec::new());
    }
    let tape = Tape::new();
    let r = rollout_batch(worker, &tape, &worker.params.bind(&tape, false), &[job], Choice::Greedy, BnMode::Eval, true)?;
    Ok(r.probs.into_iter().map(Tensor::into_data).collect())
}

/// Eval-mode encoder output for one sub-instance: node embeddings
/// `(k + 1, D)` with the depot last, and their mean.
pub fn embed(worker: &Worker, inst: &Instance, ids: &[usize]) -> Result<(Tensor, Tensor)> {
    let tape = Tape::new();
    let mut feats = Vec::new();
    push_features(&mut feats, inst, ids);
    let nodes = ids.len() + 1;
    let bound = worker.params.bind(&tape, false);
    let enc = worker.encode(
        &tape,
        &bound,
        Tensor::new(vec![nodes, 4], feats)?,
        1,
        nodes,
        BnMode::Eval,
        &mut Vec::new(),
    )?;
    Ok(((*tape.value(enc.h)).clone(), (*tape.value(enc.hbar)).clone()))
}

/// Eval-mode log-probability of decoding `tour` (customer ids, a
/// permutation of `job.ids`).
pub fn tour_logprob(worker: &Worker, job: SubJob<'_>, tour: &[usize]) -> Result<f64> {
    if job.ids.is_empty() {
        return Ok(0.0);
    }
    let local = local_positions(job.ids, tour)?;
    let tape = Tape::new();
    let bound = worker.params.bind(&tape, false);
    let r = rollout_batch(worker, &tape, &bound, &[job], Choice::Forced(&[local]), BnMode::Eval, false)?;
    Ok(tape.value(r.logprob).data()[0])
}

fn local_positions(ids: &[usize], tour: &[usize]) -> Result<Vec<usize>> {
    if tour.len() != ids.len() {
        return Err(crate::CoreError::Config(format!(
            "tour visits {} customers, job has {}",
            tour.len(),
            ids.len()
        )));
    }
    tour.iter()
        .map(|c| {
            ids.iter()
                .position(|i| i == c)
                .ok_or_else(|| crate::CoreError::Config(format!("customer {c} is not part of the job")))
        })
        .collect()
}
