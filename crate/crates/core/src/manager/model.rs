use autodiff::{BatchStats, Bound, Checkpoint, ParamSet, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::domain::Instance;
use crate::error::{CoreError, Result};
use crate::nn::{self, add_batchnorm, add_linear, BnMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManagerVariant {
    /// Graph isomorphism layers with mean aggregation over the other nodes.
    Gin,
    /// The same layer stack without neighbour aggregation.
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleHeads {
    /// Independent query/key/value projections per vehicle.
    Multi,
    /// One projection triple shared by every vehicle.
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManagerArch {
    /// Graph layers `L`.
    pub layers: usize,
    /// Raw node feature width.
    pub n0: usize,
    /// Graph embedding width.
    pub n_g: usize,
    /// Vehicle embedding width.
    pub n_vehicle: usize,
    /// Assignment attention width.
    pub n_assign: usize,
    pub m: usize,
    pub variant: ManagerVariant,
    pub heads: VehicleHeads,
    /// Keep every `eps` at its initial value of 0.
    pub freeze_eps: bool,
    /// Assignment scores are `clip * tanh(u)`; 1 keeps the plain bound.
    pub clip: f64,
}

impl Default for ManagerArch {
    fn default() -> Self {
        Self {
            layers: 3,
            n0: 4,
            n_g: 32,
            n_vehicle: 64,
            n_assign: 64,
            m: 4,
            variant: ManagerVariant::Gin,
            heads: VehicleHeads::Multi,
            freeze_eps: false,
            clip: 10.0,
        }
    }
}

impl ManagerArch {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.n_g == 0 || self.n_vehicle == 0 || self.n_assign == 0 {
            return Err(CoreError::Config("manager sizes must be positive".into()));
        }
        if self.n0 != 4 {
            return Err(CoreError::Config(format!("node features have width 4, got n0 = {}", self.n0)));
        }
        if self.m == 0 {
            return Err(CoreError::Config("m must be at least 1".into()));
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return Err(CoreError::Config(format!("clip must be positive, got {}", self.clip)));
        }
        Ok(())
    }
}

/// Customer-to-vehicle assignment policy.
#[derive(Debug, Clone)]
pub struct Manager {
    pub arch: ManagerArch,
    pub params: ParamSet,
}

fn gin(l: usize, name: &str) -> String {
    format!("gin{l}.{name}")
}

fn head(name: &str, b: usize, heads: VehicleHeads) -> String {
    match heads {
        VehicleHeads::Multi => format!("{name}{b}"),
        VehicleHeads::Single => name.to_string(),
    }
}

impl Manager {
    pub fn new(arch: ManagerArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let g = arch.n_g;
        for l in 0..arch.layers {
            let fan_in = if l == 0 { arch.n0 } else { g };
            add_linear(&mut p, &mut rng, &gin(l, "theta0"), Some(&gin(l, "b0")), fan_in, g);
            add_batchnorm(&mut p, &gin(l, "bn0"), g);
            add_linear(&mut p, &mut rng, &gin(l, "theta1"), Some(&gin(l, "b1")), g, g);
            add_batchnorm(&mut p, &gin(l, "bn1"), g);
            if arch.variant == ManagerVariant::Gin {
                p.insert(gin(l, "eps"), Tensor::scalar(0.0));
                if arch.freeze_eps {
                    p.set_trainable(&gin(l, "eps"), false)?;
                }
            }
        }
        let heads = match arch.heads {
            VehicleHeads::Multi => arch.m,
            VehicleHeads::Single => 1,
        };
        for b in 0..heads {
            let h = |n: &str| head(n, b, arch.heads);
            add_linear(&mut p, &mut rng, &h("theta_q"), None, 2 * g, arch.n_vehicle);
            add_linear(&mut p, &mut rng, &h("theta_k"), None, g, arch.n_vehicle);
            add_linear(&mut p, &mut rng, &h("theta_v"), None, g, arch.n_vehicle);
        }
        add_linear(&mut p, &mut rng, "theta_q_prime", None, arch.n_vehicle, arch.n_assign);
        add_linear(&mut p, &mut rng, "theta_k_prime", None, g, arch.n_assign);
        Ok(Self { arch, params: p })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut arch = serde_json::to_value(&self.arch).expect("arch serializes");
        arch["kind"] = json!("manager");
        self.params.to_checkpoint(arch)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.arch.get("kind").and_then(|k| k.as_str()) != Some("manager") {
            return Err(CoreError::Config("checkpoint is not a manager checkpoint".into()));
        }
        let arch: ManagerArch = serde_json::from_value(ckpt.arch.clone())?;
        let mut mgr = Manager::new(arch, 0)?;
        mgr.params.load_from(ckpt)?;
        Ok(mgr)
    }

    /// Graph layers on `batch` graphs of `nodes` nodes (customers first,
    /// depot last). Returns the summed per-node embedding `(batch * nodes,
    /// n_G)` and the graph embedding `(batch, n_G)`.
    pub(crate) fn graph_embed(
        &self,
        tape: &Tape,
        bound: &Bound,
        feats: Tensor,
        batch: usize,
        nodes: usize,
        bn: BnMode,
        stats: &mut Vec<(String, BatchStats)>,
    ) -> Result<(Var, Var)> {
        let g = self.arch.n_g;
        let mut h = tape.constant(feats);
        let agg_matrix = (self.arch.variant == ManagerVariant::Gin && nodes > 1).then(|| {
            let w = 1.0 / (nodes - 1) as f64;
            let mut a = Tensor::zeros(&[batch, nodes, nodes]);
            for b in 0..batch {
                for i in 0..nodes {
                    for j in 0..nodes {
                        if i != j {
                            a.data_mut()[(b * nodes + i) * nodes + j] = w;
                        }
                    }
                }
            }
            tape.constant(a)
        });
        let mut sum: Option<Var> = None;
        for l in 0..self.arch.layers {
            let width = if l == 0 { self.arch.n0 } else { g };
            let mut x = h;
            if self.arch.variant == ManagerVariant::Gin {
                let own = tape.scale_by(h, tape.add_scalar(bound.var(&gin(l, "eps"))?, 1.0))?;
                x = match agg_matrix {
                    Some(a) => {
                        let h3 = tape.reshape(h, &[batch, nodes, width])?;
                        let agg = tape.reshape(tape.bmm(a, h3)?, &[batch * nodes, width])?;
                        tape.add(own, agg)?
                    }
                    None => own,
                };
            }
            let z = nn::linear(tape, bound, x, &gin(l, "theta0"), Some(&gin(l, "b0")))?;
            let z = nn::batchnorm(tape, bound, &self.params, &gin(l, "bn0"), z, bn, stats)?;
            let z = tape.relu(z);
            let z = nn::linear(tape, bound, z, &gin(l, "theta1"), Some(&gin(l, "b1")))?;
            let z = nn::batchnorm(tape, bound, &self.params, &gin(l, "bn1"), z, bn, stats)?;
            h = tape.relu(z);
            sum = Some(match sum {
                None => h,
                Some(s) => tape.add(s, h)?,
            });
        }
        let hv = sum.expect("at least one layer");
        let hg = tape.mean(tape.reshape(hv, &[batch, nodes, g])?, 1)?;
        Ok((hv, hg))
    }

    /// Vehicle embeddings `h_b`, each `(batch, n_vehicle)`.
    pub(crate) fn embed_vehicles(
        &self,
        tape: &Tape,
        bound: &Bound,
        hc: Var,
        hcust: Var,
        batch: usize,
        n: usize,
    ) -> Result<Vec<Var>> {
        let d = self.arch.n_vehicle;
        let scale = 1.0 / (d as f64).sqrt();
        let one = |b: usize| -> Result<Var> {
            let h = |name: &str| head(name, b, self.arch.heads);
            let q = nn::linear(tape, bound, hc, &h("theta_q"), None)?;
            let q = tape.reshape(q, &[batch, 1, d])?;
            let k = tape.reshape(nn::linear(tape, bound, hcust, &h("theta_k"), None)?, &[batch, n, d])?;
            let v = tape.reshape(nn::linear(tape, bound, hcust, &h("theta_v"), None)?, &[batch, n, d])?;
            let u = tape.scale(tape.bmm(q, tape.transpose(k)?)?, scale);
            let w = tape.softmax(u, 2)?;
            Ok(tape.reshape(tape.bmm(w, v)?, &[batch, d])?)
        };
        match self.arch.heads {
            VehicleHeads::Multi => (0..self.arch.m).map(one).collect(),
            VehicleHeads::Single => {
                let shared = one(0)?;
                Ok(vec![shared; self.arch.m])
            }
        }
    }

    /// Full forward pass. `log_probs` is `(batch * n, m)`: row `b * n + i`
    /// holds the log-probabilities of customer `i` of graph `b` over vehicles.
    pub(crate) fn forward(
        &self,
        tape: &Tape,
        bound: &Bound,
        insts: &[&Instance],
        bn: BnMode,
    ) -> Result<Forward> {
        let batch = insts.len();
        let n = insts[0].n();
        if insts.iter().any(|i| i.n() != n) {
            return Err(CoreError::Config("manager batch mixes instance sizes".into()));
        }
        if let Some(bad) = insts.iter().find(|i| i.m != self.arch.m) {
            return Err(CoreError::Config(format!(
                "manager is built for m = {} but instance has m = {}",
                self.arch.m, bad.m
            )));
        }
        let nodes = n + 1;
        let mut feats = Vec::with_capacity(batch * nodes * 4);
        for inst in insts {
            for c in &inst.customers {
                feats.extend_from_slice(&c.features());
            }
            feats.extend_from_slice(&inst.depot.features());
        }
        let feats = Tensor::new(vec![batch * nodes, 4], feats)?;
        let mut stats = Vec::new();
        let (hv, hg) = self.graph_embed(tape, bound, feats, batch, nodes, bn, &mut stats)?;
        let depot_rows: Vec<usize> = (0..batch).map(|b| b * nodes + n).collect();
        let cust_rows: Vec<usize> = (0..batch).flat_map(|b| (0..n).map(move |i| b * nodes + i)).collect();
        let hd = tape.gather_rows(hv, &depot_rows)?;
        let hcust = tape.gather_rows(hv, &cust_rows)?;
        let hc = tape.concat(&[hg, hd], 1)?;
        let hb = self.embed_vehicles(tape, bound, hc, hcust, batch, n)?;

        let (m, d, da) = (self.arch.m, self.arch.n_vehicle, self.arch.n_assign);
        let stacked = tape.concat(&hb, 1)?; // (batch, m * d)
        let stacked = tape.reshape(stacked, &[batch * m, d])?;
        let qp = tape.reshape(nn::linear(tape, bound, stacked, "theta_q_prime", None)?, &[batch, m, da])?;
        let kp = tape.reshape(nn::linear(tape, bound, hcust, "theta_k_prime", None)?, &[batch, n, da])?;
        let u = tape.scale(tape.bmm(qp, tape.transpose(kp)?)?, 1.0 / (da as f64).sqrt());
        let s = tape.scale(tape.tanh(u), self.arch.clip); // (batch, m, n)
        let s = tape.reshape(tape.transpose(s)?, &[batch * n, m])?;
        let log_probs = tape.log_softmax(s, 1)?;
        Ok(Forward {
            log_probs,
            vehicles: hb,
            stats,
            batch,
            n,
        })
    }
}

pub(crate) struct Forward {
    pub log_probs: Var,
    pub vehicles: Vec<Var>,
    pub stats: Vec<(String, BatchStats)>,
    pub batch: usize,
    pub n: usize,
}
