//! Parameter initialisation and layer helpers shared by both policies.

use autodiff::{BatchStats, Bound, ParamSet, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

/// Whether batch norm uses batch statistics (and reports them) or the
/// stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BnMode {
    Train,
    Eval,
}

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub(crate) fn init_uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    Tensor::uniform(shape, 1.0 / (fan_in.max(1) as f64).sqrt(), rng)
}

pub(crate) fn add_linear<R: Rng + ?Sized>(
    params: &mut ParamSet,
    rng: &mut R,
    w: &str,
    b: Option<&str>,
    fan_in: usize,
    fan_out: usize,
) {
    params.insert(w, init_uniform(rng, &[fan_in, fan_out], fan_in));
    if let Some(b) = b {
        params.insert(b, init_uniform(rng, &[fan_out], fan_in));
    }
}

pub(crate) fn add_batchnorm(params: &mut ParamSet, prefix: &str, dim: usize) {
    params.insert(format!("{prefix}.gamma"), Tensor::ones(&[dim]));
    params.insert(format!("{prefix}.beta"), Tensor::zeros(&[dim]));
    params.insert_buffer(format!("{prefix}.running_mean"), Tensor::zeros(&[dim]));
    params.insert_buffer(format!("{prefix}.running_var"), Tensor::ones(&[dim]));
}

/// `x @ W (+ b)`.
pub(crate) fn linear(tape: &Tape, bound: &Bound, x: Var, w: &str, b: Option<&str>) -> Result<Var> {
    let y = tape.matmul(x, bound.var(w)?)?;
    Ok(match b {
        Some(b) => tape.add_row(y, bound.var(b)?)?,
        None => y,
    })
}

/// Batch norm over the rows of `x`. In train mode the batch statistics are
/// appended to `stats` for a later running-average update.
pub(crate) fn batchnorm(
    tape: &Tape,
    bound: &Bound,
    params: &ParamSet,
    prefix: &str,
    x: Var,
    mode: BnMode,
    stats: &mut Vec<(String, BatchStats)>,
) -> Result<Var> {
    let gamma = bound.var(&format!("{prefix}.gamma"))?;
    let beta = bound.var(&format!("{prefix}.beta"))?;
    match mode {
        BnMode::Train => {
            let (y, s) = tape.batchnorm_train(x, gamma, beta, BN_EPS)?;
            stats.push((prefix.to_string(), s));
            Ok(y)
        }
        BnMode::Eval => {
            let mean = params.get(&format!("{prefix}.running_mean"))?;
            let var = params.get(&format!("{prefix}.running_var"))?;
            Ok(tape.batchnorm_eval(x, gamma, beta, mean.data(), var.data(), BN_EPS)?)
        }
    }
}

/// `running = (1 - momentum) * running + momentum * batch`.
pub(crate) fn update_running_stats(params: &mut ParamSet, stats: &[(String, BatchStats)]) -> Result<()> {
    for (prefix, s) in stats {
        for (suffix, batch) in [("running_mean", &s.mean), ("running_var", &s.var)] {
            let name = format!("{prefix}.{suffix}");
            let old = params.get(&name)?;
            let data: Vec<f64> = old
                .data()
                .iter()
                .zip(batch)
                .map(|(r, b)| (1.0 - BN_MOMENTUM) * r + BN_MOMENTUM * b)
                .collect();
            let shape = old.shape().to_vec();
            params.set(&name, Tensor::new(shape, data)?)?;
        }
    }
    Ok(())
}

/// Index of the largest entry; the first one on ties.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from a probability row.
pub(crate) fn sample_index<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}
