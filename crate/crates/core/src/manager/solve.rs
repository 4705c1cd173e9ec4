use std::collections::BTreeMap;
use std::time::Instant;

use autodiff::{Tape, Tensor};
use rand_chacha::ChaCha8Rng;

use super::model::{Forward, Manager};
use crate::domain::{Assignment, Instance, SolutionReport};
use crate::error::{CoreError, Result};
use crate::exec::Exec;
use crate::nn::{self, BnMode};
use crate::worker::{greedy_plans, DecodeMode, SubJob, Worker};

/// Trained routing policies keyed by the sub-instance size they were
/// trained on.
#[derive(Debug, Clone, Default)]
pub struct WorkerBank {
    workers: BTreeMap<usize, Worker>,
}

impl WorkerBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn single(worker: Worker) -> Self {
        let mut bank = Self::new();
        bank.insert(worker);
        bank
    }

    pub fn insert(&mut self, worker: Worker) {
        self.workers.insert(worker.arch.pretrain_size, worker);
    }

    pub fn sizes(&self) -> impl Iterator<Item = usize> + '_ {
        self.workers.keys().copied()
    }

    /// The policy trained on `ceil(n / m)` customers.
    pub fn select(&self, n: usize, m: usize) -> Result<&Worker> {
        let required = n.div_ceil(m.max(1));
        self.workers
            .get(&required)
            .ok_or(CoreError::MissingCheckpoint { required })
    }
}

/// Picks one vehicle per customer from the forward pass and returns the
/// assignments with their chosen vehicle indices flattened graph-major.
pub(crate) fn choose(
    tape: &Tape,
    fwd: &Forward,
    mode: DecodeMode,
    rngs: Option<&mut [ChaCha8Rng]>,
) -> Result<(Vec<Assignment>, Vec<usize>)> {
    let lp = tape.value(fwd.log_probs);
    let m = lp.shape()[1];
    let mut rngs = rngs;
    let mut chosen = Vec::with_capacity(fwd.batch * fwd.n);
    for b in 0..fwd.batch {
        for i in 0..fwd.n {
            let row = lp.row(b * fwd.n + i);
            let v = match (mode, rngs.as_deref_mut()) {
                (DecodeMode::Greedy, _) => nn::argmax(row),
                (DecodeMode::Sample, Some(r)) => {
                    let p: Vec<f64> = row.iter().map(|x| x.exp()).collect();
                    nn::sample_index(&mut r[b], &p)
                }
                (DecodeMode::Sample, None) => {
                    return Err(CoreError::Config("sampling requires random streams".into()));
                }
            };
            debug_assert!(v < m);
            chosen.push(v);
        }
    }
    let assignments = chosen
        .chunks(fwd.n.max(1))
        .take(fwd.batch)
        .map(|c| Assignment::new(c.to_vec()))
        .collect();
    Ok((assignments, chosen))
}

/// Eval-mode assignments for a batch of equally sized instances. The
/// log-probability of each assignment is attached.
pub fn assign(
    mgr: &Manager,
    insts: &[&Instance],
    mode: DecodeMode,
    rngs: Option<&mut [ChaCha8Rng]>,
) -> Result<Vec<Assignment>> {
    if insts.is_empty() {
        return Ok(Vec::new());
    }
    let tape = Tape::new();
    let bound = mgr.params.bind(&tape, false);
    let fwd = mgr.forward(&tape, &bound, insts, BnMode::Eval)?;
    let (mut out, chosen) = choose(&tape, &fwd, mode, rngs)?;
    let lp = tape.value(fwd.log_probs);
    for (b, a) in out.iter_mut().enumerate() {
        let total = (0..fwd.n)
            .map(|i| lp.row(b * fwd.n + i)[chosen[b * fwd.n + i]])
            .sum::<f64>();
        a.logprob = Some(total);
    }
    Ok(out)
}

/// Per-customer assignment probabilities `[customer][vehicle]` (eval mode).
pub fn assignment_probs(mgr: &Manager, inst: &Instance) -> Result<Vec<Vec<f64>>> {
    let tape = Tape::new();
    let bound = mgr.params.bind(&tape, false);
    let fwd = mgr.forward(&tape, &bound, &[inst], BnMode::Eval)?;
    let lp = tape.value(fwd.log_probs);
    Ok((0..fwd.n)
        .map(|i| lp.row(i).iter().map(|v| v.exp()).collect())
        .collect())
}

/// Eval-mode graph embedding of one instance.
#[derive(Debug, Clone)]
pub struct GinOutput {
    /// Summed per-node embeddings `(n + 1, n_G)`, depot last.
    pub nodes: Tensor,
    pub graph: Vec<f64>,
    pub depot: Vec<f64>,
}

pub fn gin_embed(mgr: &Manager, inst: &Instance) -> Result<GinOutput> {
    let tape = Tape::new();
    let bound = mgr.params.bind(&tape, false);
    let nodes = inst.n() + 1;
    let mut feats = Vec::with_capacity(nodes * 4);
    for c in &inst.customers {
        feats.extend_from_slice(&c.features());
    }
    feats.extend_from_slice(&inst.depot.features());
    let (hv, hg) = mgr.graph_embed(
        &tape,
        &bound,
        Tensor::new(vec![nodes, 4], feats)?,
        1,
        nodes,
        BnMode::Eval,
        &mut Vec::new(),
    )?;
    let h = (*tape.value(hv)).clone();
    Ok(GinOutput {
        depot: h.row(nodes - 1).to_vec(),
        graph: tape.value(hg).data().to_vec(),
        nodes: h,
    })
}

/// Eval-mode vehicle embeddings `h_b` for one instance.
pub fn vehicle_embeddings(mgr: &Manager, inst: &Instance) -> Result<Vec<Vec<f64>>> {
    let tape = Tape::new();
    let bound = mgr.params.bind(&tape, false);
    let fwd = mgr.forward(&tape, &bound, &[inst], BnMode::Eval)?;
    Ok(fwd.vehicles.iter().map(|&v| tape.value(v).data().to_vec()).collect())
}

/// Routes every vehicle's customers with the worker and scores the result.
pub fn evaluate_assignments(
    insts: &[&Instance],
    assignments: &[Assignment],
    worker: &Worker,
    exec: Exec,
) -> Result<Vec<SolutionReport>> {
    let mut groups = Vec::with_capacity(insts.len());
    for (inst, a) in insts.iter().zip(assignments) {
        a.validate(inst.n(), inst.m)?;
        groups.push(a.groups(inst.m));
    }
    let jobs: Vec<SubJob<'_>> = insts
        .iter()
        .zip(&groups)
        .flat_map(|(inst, g)| {
            g.iter().enumerate().map(move |(vehicle, ids)| SubJob {
                inst,
                vehicle,
                ids,
            })
        })
        .collect();
    let mut plans = greedy_plans(worker, &jobs, exec)?.into_iter();
    insts
        .iter()
        .map(|inst| {
            let p: Vec<_> = plans.by_ref().take(inst.m).collect();
            SolutionReport::from_plans(p, inst.n(), inst.beta, 0.0)
        })
        .collect()
}

/// Greedy end-to-end solve of one instance.
pub fn solve(inst: &Instance, mgr: &Manager, bank: &WorkerBank, exec: Exec) -> Result<SolutionReport> {
    let worker = bank.select(inst.n(), inst.m)?;
    let start = Instant::now();
    let a = assign(mgr, &[inst], DecodeMode::Greedy, None)?;
    let mut r = evaluate_assignments(&[inst], &a, worker, exec)?.remove(0);
    r.wall_time = start.elapsed().as_secs_f64();
    Ok(r)
}

/// Greedy or sampled solve of many equally sized instances with batched
/// forward passes. Each report carries an equal share of the wall time.
pub fn solve_batch(
    insts: &[&Instance],
    mgr: &Manager,
    worker: &Worker,
    mode: DecodeMode,
    rngs: Option<&mut [ChaCha8Rng]>,
    exec: Exec,
) -> Result<Vec<SolutionReport>> {
    let start = Instant::now();
    let a = assign(mgr, insts, mode, rngs)?;
    let mut reports = evaluate_assignments(insts, &a, worker, exec)?;
    let share = start.elapsed().as_secs_f64() / insts.len().max(1) as f64;
    reports.iter_mut().for_each(|r| r.wall_time = share);
    Ok(reports)
}
