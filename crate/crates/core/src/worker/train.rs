use autodiff::{Adam, AdamConfig, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Choice, Worker, WorkerArch};
use super::rollout::{greedy_plans, rollout_batch, SubJob};
use crate::domain::{generate_instance, Instance, SubTourPlan};
use crate::error::{CoreError, Result};
use crate::exec::Exec;
use crate::nn::{update_running_stats, BnMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkerConfig {
    pub arch: WorkerArch,
    pub batch_size: usize,
    pub epochs: usize,
    pub instances_per_epoch: usize,
    /// Baseline copy threshold in hybrid-cost units.
    pub alpha: f64,
    pub lr: f64,
    pub beta: f64,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        Self {
            arch: WorkerArch::default(),
            batch_size: 128,
            epochs: 20,
            instances_per_epoch: 12_800,
            alpha: 0.01,
            lr: 1e-4,
            beta: 100.0,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

impl WorkerConfig {
    pub fn updates(&self) -> usize {
        self.epochs * self.instances_per_epoch.div_ceil(self.batch_size.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.batch_size == 0 {
            return Err(CoreError::Config("batch_size must be positive".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(CoreError::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.lr > 0.0) || !(self.beta >= 0.0) {
            return Err(CoreError::Config("lr must be positive and beta non-negative".into()));
        }
        Ok(())
    }
}

/// Batch statistics of one update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean_cost: f64,
    pub mean_length: f64,
    pub mean_rej: f64,
    pub baseline_cost: f64,
}

impl CurvePoint {
    pub(crate) fn from_plans(iteration: usize, plans: &[SubTourPlan], baseline: &[SubTourPlan]) -> Self {
        let mean = |f: &dyn Fn(&SubTourPlan) -> f64, ps: &[SubTourPlan]| ps.iter().map(f).sum::<f64>() / ps.len() as f64;
        Self {
            iteration,
            mean_cost: mean(&|p| p.hybrid_cost, plans),
            mean_length: mean(&|p| p.length, plans),
            mean_rej: mean(&|p| p.rej_rate, plans),
            baseline_cost: mean(&|p| p.hybrid_cost, baseline),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorkerTraining {
    /// The baseline policy, which is the trained result.
    pub worker: Worker,
    pub curve: Vec<CurvePoint>,
    pub baseline_updates: usize,
}

pub(crate) fn fresh_batch(rng: &mut ChaCha8Rng, size: usize, count: usize, m: usize, beta: f64) -> Vec<Instance> {
    (0..count)
        .map(|_| generate_instance(size, m, beta, rng.gen()))
        .collect()
}

pub fn train_worker(cfg: &WorkerConfig) -> Result<WorkerTraining> {
    train_worker_with(cfg, |_| {})
}

/// REINFORCE with a greedy rollout baseline. `on_update` sees every
/// training-curve point as it is produced.
pub fn train_worker_with(cfg: &WorkerConfig, mut on_update: impl FnMut(&CurvePoint)) -> Result<WorkerTraining> {
    cfg.validate()?;
    let mut theta = Worker::new(cfg.arch.clone(), cfg.seed)?;
    let mut baseline = theta.clone();
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5ee_d0fb_a7c4);
    let size = cfg.arch.pretrain_size;
    let ids: Vec<usize> = (0..size).collect();
    let mut curve = Vec::with_capacity(cfg.updates());
    let mut baseline_updates = 0;

    for iteration in 0..cfg.updates() {
        let insts = fresh_batch(&mut rng, size, cfg.batch_size, 1, cfg.beta);
        let jobs: Vec<SubJob<'_>> = insts
            .iter()
            .map(|inst| SubJob {
                inst,
                vehicle: 0,
                ids: &ids,
            })
            .collect();
        let mut streams: Vec<ChaCha8Rng> = (0..jobs.len()).map(|_| ChaCha8Rng::seed_from_u64(rng.gen())).collect();

        let bl_plans = greedy_plans(&baseline, &jobs, cfg.exec)?;

        let tape = Tape::new();
        let bound = theta.params.bind(&tape, true);
        let run = rollout_batch(
            &theta,
            &tape,
            &bound,
            &jobs,
            Choice::Sample(&mut streams),
            BnMode::Train,
            false,
        )?;
        let adv: Vec<f64> = run
            .plans
            .iter()
            .zip(&bl_plans)
            .map(|(p, b)| p.hybrid_cost - b.hybrid_cost)
            .collect();
        let n = adv.len();
        let weighted = tape.mul(run.logprob, tape.constant(Tensor::new(vec![n], adv)?))?;
        let loss = tape.scale(tape.sum_all(weighted), 1.0 / n as f64);
        let loss_value = tape.item(loss).unwrap_or(f64::NAN);
        if !loss_value.is_finite() {
            return Err(CoreError::Divergence(format!("non-finite worker loss {loss_value} at update {iteration}")));
        }
        let grads = bound.grads(&theta.params, &tape.backward(loss)?);
        drop(bound);
        drop(tape);
        adam.step(&mut theta.params, &grads)?;
        update_running_stats(&mut theta.params, &run.stats)?;
        if !theta.params.is_finite() {
            return Err(CoreError::Divergence(format!("non-finite worker parameters after update {iteration}")));
        }

        let point = CurvePoint::from_plans(iteration, &run.plans, &bl_plans);
        if point.mean_cost - point.baseline_cost < -cfg.alpha {
            baseline = theta.clone();
            baseline_updates += 1;
        }
        on_update(&point);
        curve.push(point);
    }
    Ok(WorkerTraining {
        worker: baseline,
        curve,
        baseline_updates,
    })
}
