use std::collections::BTreeMap;

use crate::error::{AutodiffError, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            state: AdamState::default(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        adam_step(params, grads, &mut self.state, self.config)
    }
}

/// One Adam update of every trainable parameter named in `grads`.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    cfg: AdamConfig,
) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in grads {
        if !params.is_trainable(name) {
            continue;
        }
        let p = params
            .get_mut(name)
            .ok_or_else(|| AutodiffError::MissingTensor(name.clone()))?;
        if p.shape() != g.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        let n = g.numel();
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            *w -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, w: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(name, Tensor::scalar(w));
        p
    }

    fn grad(name: &str, g: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([(name.to_string(), Tensor::scalar(g))])
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut p = one("w", 0.5);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut p, &grad("w", 1.0)).unwrap();
        let w1 = p.get("w").unwrap().data()[0];
        let (m1, v1) = (adam.state.m["w"][0], adam.state.v["w"][0]);
        // With a zero gradient the parameter still moves along the first
        // moment; a fresh optimizer must leave it untouched.
        let mut fresh = Adam::new(AdamConfig::default());
        let mut q = one("w", 0.5);
        fresh.step(&mut q, &grad("w", 0.0)).unwrap();
        assert_eq!(q.get("w").unwrap().data()[0], 0.5);
        adam.step(&mut p, &grad("w", 0.0)).unwrap();
        assert!((adam.state.m["w"][0] - 0.9 * m1).abs() < 1e-15);
        assert!((adam.state.v["w"][0] - 0.999 * v1).abs() < 1e-15);
        assert!(p.get("w").unwrap().data()[0] < w1);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let cfg = AdamConfig::default();
        for g in [3.0, -0.25, 1e-3] {
            let mut p = one("w", 0.0);
            let mut adam = Adam::new(cfg);
            adam.step(&mut p, &grad("w", g)).unwrap();
            let expected = -cfg.lr * g / (g.abs() + cfg.eps);
            assert!((p.get("w").unwrap().data()[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn minimizes_square() {
        // Reference recurrence for f(w) = w^2, written out independently.
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            w -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        let mut p = one("w", 1.0);
        let mut adam = Adam::new(AdamConfig { lr, ..AdamConfig::default() });
        for _ in 0..100 {
            let wv = p.get("w").unwrap().data()[0];
            adam.step(&mut p, &grad("w", 2.0 * wv)).unwrap();
        }
        let got = p.get("w").unwrap().data()[0];
        assert!((got - w).abs() < 1e-12);
        assert!(got.abs() < 0.2, "{got}");
    }

    #[test]
    fn skips_buffers() {
        let mut p = ParamSet::new();
        p.insert_buffer("rm", Tensor::scalar(1.0));
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut p, &grad("rm", 1.0)).unwrap();
        assert_eq!(p.get("rm").unwrap().data()[0], 1.0);
    }
}
