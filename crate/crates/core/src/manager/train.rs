use autodiff::{Adam, AdamConfig, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Manager, ManagerArch};
use super::solve::{choose, evaluate_assignments, solve_batch};
use crate::domain::{Instance, ObjectiveMode, SolutionReport};
use crate::error::{CoreError, Result};
use crate::exec::Exec;
use crate::nn::{update_running_stats, BnMode};
use crate::worker::{fresh_batch, CurvePoint, DecodeMode, Worker};

/// What the sampled cost is compared against in the policy gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManagerBaseline {
    /// Greedy assignment of the same instance under the current parameters.
    Greedy,
    /// Mean sampled cost over the batch.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManagerConfig {
    pub arch: ManagerArch,
    /// Customers per training instance.
    pub n: usize,
    pub beta: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub val_size: usize,
    pub val_interval: usize,
    pub lr: f64,
    pub seed: u64,
    pub objective: ObjectiveMode,
    pub baseline: ManagerBaseline,
    pub exec: Exec,
}

impl Default for ManagerConfig {
    fn default() -> Self {
        Self {
            arch: ManagerArch::default(),
            n: 20,
            beta: 100.0,
            iterations: 10_000,
            batch_size: 128,
            val_size: 100,
            val_interval: 100,
            lr: 1e-4,
            seed: 0,
            objective: ObjectiveMode::Minmax,
            baseline: ManagerBaseline::Greedy,
            exec: Exec::default(),
        }
    }
}

impl ManagerConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.n == 0 || self.batch_size == 0 || self.val_interval == 0 {
            return Err(CoreError::Config("n, batch_size and val_interval must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.beta >= 0.0) {
            return Err(CoreError::Config("lr must be positive and beta non-negative".into()));
        }
        Ok(())
    }

    /// The fixed validation instances, shared by every run with this seed.
    pub fn validation_set(&self) -> Vec<Instance> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x0a11_da7e);
        fresh_batch(&mut rng, self.n, self.val_size, self.arch.m, self.beta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub iteration: usize,
    pub mean_cost: f64,
}

#[derive(Debug, Clone)]
pub struct ManagerTraining {
    /// Parameters with the lowest validation cost seen.
    pub best: Manager,
    pub last: Manager,
    pub curve: Vec<CurvePoint>,
    pub validation: Vec<ValidationPoint>,
}

/// Mean cost of greedy or sampled solves over `insts`. Sampling streams are
/// derived from `seed` per instance.
pub fn evaluate_manager(
    mgr: &Manager,
    worker: &Worker,
    insts: &[Instance],
    mode: DecodeMode,
    seed: u64,
    objective: ObjectiveMode,
    exec: Exec,
) -> Result<f64> {
    Ok(mean_cost(&manager_reports(mgr, worker, insts, mode, seed, exec)?, objective))
}

/// Per-instance reports of [`evaluate_manager`].
pub fn manager_reports(
    mgr: &Manager,
    worker: &Worker,
    insts: &[Instance],
    mode: DecodeMode,
    seed: u64,
    exec: Exec,
) -> Result<Vec<SolutionReport>> {
    let refs: Vec<&Instance> = insts.iter().collect();
    let mut out = Vec::with_capacity(insts.len());
    let mut streams: Vec<ChaCha8Rng> = (0..insts.len())
        .map(|i| ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64)))
        .collect();
    for (chunk, rngs) in refs.chunks(128).zip(streams.chunks_mut(128)) {
        let rngs = (mode == DecodeMode::Sample).then_some(rngs);
        out.extend(solve_batch(chunk, mgr, worker, mode, rngs, exec)?);
    }
    Ok(out)
}

fn mean_cost(reports: &[SolutionReport], objective: ObjectiveMode) -> f64 {
    reports.iter().map(|r| r.cost(objective)).sum::<f64>() / reports.len().max(1) as f64
}

pub fn train_manager(cfg: &ManagerConfig, worker: &Worker) -> Result<ManagerTraining> {
    train_manager_with(cfg, worker, |_| {})
}

/// REINFORCE with a self-critical greedy baseline. The worker stays frozen.
pub fn train_manager_with(
    cfg: &ManagerConfig,
    worker: &Worker,
    mut on_update: impl FnMut(&CurvePoint),
) -> Result<ManagerTraining> {
    cfg.validate()?;
    let mut mgr = Manager::new(cfg.arch.clone(), cfg.seed)?;
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x3a_1a9e_5eed);
    let val = cfg.validation_set();
    let validate = |mgr: &Manager| evaluate_manager(mgr, worker, &val, DecodeMode::Greedy, 0, cfg.objective, cfg.exec);

    let mut validation = Vec::new();
    let mut best = mgr.clone();
    let mut best_cost = f64::INFINITY;
    if !val.is_empty() {
        best_cost = validate(&mgr)?;
        validation.push(ValidationPoint {
            iteration: 0,
            mean_cost: best_cost,
        });
    }
    let mut curve = Vec::with_capacity(cfg.iterations);

    for iteration in 0..cfg.iterations {
        let insts = fresh_batch(&mut rng, cfg.n, cfg.batch_size, cfg.arch.m, cfg.beta);
        let refs: Vec<&Instance> = insts.iter().collect();
        let mut streams: Vec<ChaCha8Rng> = (0..insts.len()).map(|_| ChaCha8Rng::seed_from_u64(rng.gen())).collect();

        let tape = Tape::new();
        let bound = mgr.params.bind(&tape, true);
        let fwd = mgr.forward(&tape, &bound, &refs, BnMode::Train)?;
        let (sampled, chosen) = choose(&tape, &fwd, DecodeMode::Sample, Some(&mut streams))?;
        let (reports, base) = match cfg.baseline {
            ManagerBaseline::Greedy => {
                let (greedy, _) = choose(&tape, &fwd, DecodeMode::Greedy, None)?;
                let both_insts: Vec<&Instance> = refs.iter().chain(&refs).copied().collect();
                let both: Vec<_> = sampled.into_iter().chain(greedy).collect();
                let mut reports = evaluate_assignments(&both_insts, &both, worker, cfg.exec)?;
                let base: Vec<f64> = reports.split_off(insts.len()).iter().map(|r| r.cost(cfg.objective)).collect();
                (reports, base)
            }
            ManagerBaseline::Mean => {
                let reports = evaluate_assignments(&refs, &sampled, worker, cfg.exec)?;
                let base = vec![mean_cost(&reports, cfg.objective); reports.len()];
                (reports, base)
            }
        };
        let adv: Vec<f64> = reports.iter().zip(&base).map(|(s, g)| s.cost(cfg.objective) - g).collect();

        let b = insts.len();
        let logp = tape.pick(fwd.log_probs, &chosen)?;
        let logp = tape.sum(tape.reshape(logp, &[b, cfg.n])?, 1)?;
        let weighted = tape.mul(logp, tape.constant(Tensor::new(vec![b], adv)?))?;
        let loss = tape.scale(tape.sum_all(weighted), 1.0 / b as f64);
        let loss_value = tape.item(loss).unwrap_or(f64::NAN);
        if !loss_value.is_finite() {
            return Err(CoreError::Divergence(format!("non-finite manager loss {loss_value} at iteration {iteration}")));
        }
        let grads = bound.grads(&mgr.params, &tape.backward(loss)?);
        let stats = fwd.stats;
        drop(bound);
        drop(tape);
        adam.step(&mut mgr.params, &grads)?;
        update_running_stats(&mut mgr.params, &stats)?;
        if !mgr.params.is_finite() {
            return Err(CoreError::Divergence(format!("non-finite manager parameters after iteration {iteration}")));
        }

        let parts: Vec<(f64, f64)> = reports.iter().map(|r| r.length_and_rej(cfg.objective)).collect();
        let point = CurvePoint {
            iteration,
            mean_cost: mean_cost(&reports, cfg.objective),
            mean_length: parts.iter().map(|p| p.0).sum::<f64>() / b as f64,
            mean_rej: parts.iter().map(|p| p.1).sum::<f64>() / b as f64,
            baseline_cost: base.iter().sum::<f64>() / b as f64,
        };
        on_update(&point);
        curve.push(point);

        let done = iteration + 1;
        if !val.is_empty() && (done % cfg.val_interval == 0 || done == cfg.iterations) {
            let cost = validate(&mgr)?;
            validation.push(ValidationPoint {
                iteration: done,
                mean_cost: cost,
            });
            if cost < best_cost {
                best_cost = cost;
                best = mgr.clone();
            }
        }
    }
    Ok(ManagerTraining {
        best: if val.is_empty() { mgr.clone() } else { best },
        last: mgr,
        curve,
        validation,
    })
}
