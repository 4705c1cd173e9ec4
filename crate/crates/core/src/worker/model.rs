use autodiff::{BatchStats, Bound, Checkpoint, ParamSet, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::domain::Instance;
use crate::error::{CoreError, Result};
use crate::nn::{self, add_batchnorm, add_linear, BnMode};

/// Encoder and decoder sizes of the routing policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkerArch {
    /// Encoder layers `N`.
    pub layers: usize,
    pub heads: usize,
    /// Embedding width `D`; must be divisible by `heads`.
    pub embed_dim: usize,
    /// Hidden width of the feed-forward sublayer.
    pub ff_dim: usize,
    /// Customers per training sub-instance.
    pub pretrain_size: usize,
    /// Optional `C * tanh(u)` clipping of decoder logits.
    pub clip: Option<f64>,
}

impl Default for WorkerArch {
    fn default() -> Self {
        Self {
            layers: 3,
            heads: 8,
            embed_dim: 128,
            ff_dim: 512,
            pretrain_size: 5,
            clip: None,
        }
    }
}

impl WorkerArch {
    pub fn d_k(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.embed_dim == 0 || self.ff_dim == 0 {
            return Err(CoreError::Config("worker sizes must be positive".into()));
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(CoreError::Config(format!(
                "embed_dim {} is not divisible by heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.pretrain_size == 0 {
            return Err(CoreError::Config("pretrain_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Sample,
    Greedy,
}

/// Attention encoder-decoder over one vehicle's customers and the depot.
#[derive(Debug, Clone)]
pub struct Worker {
    pub arch: WorkerArch,
    pub params: ParamSet,
}

pub(crate) const FEATURES: usize = 4;

fn layer(l: usize, name: &str) -> String {
    format!("enc{l}.{name}")
}

impl Worker {
    pub fn new(arch: WorkerArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, f) = (arch.embed_dim, arch.ff_dim);
        let mut p = ParamSet::new();
        add_linear(&mut p, &mut rng, "W_x", Some("b_x"), FEATURES, d);
        for l in 0..arch.layers {
            for w in ["W_Q", "W_K", "W_V", "W_O"] {
                add_linear(&mut p, &mut rng, &layer(l, w), None, d, d);
            }
            add_linear(&mut p, &mut rng, &layer(l, "W_ff0"), Some(&layer(l, "b_ff0")), d, f);
            add_linear(&mut p, &mut rng, &layer(l, "W_ff1"), Some(&layer(l, "b_ff1")), f, d);
            add_batchnorm(&mut p, &layer(l, "bn"), d);
        }
        add_linear(&mut p, &mut rng, "W_Qd", None, 3 * d, d);
        add_linear(&mut p, &mut rng, "W_Kd", None, d, d);
        p.insert("v_f", Tensor::uniform(&[1, d], 1.0, &mut rng));
        p.insert("v_l", Tensor::uniform(&[1, d], 1.0, &mut rng));
        Ok(Self { arch, params: p })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let arch = json!({
            "kind": "worker",
            "layers": self.arch.layers,
            "heads": self.arch.heads,
            "embed_dim": self.arch.embed_dim,
            "ff_dim": self.arch.ff_dim,
            "pretrain_size": self.arch.pretrain_size,
            "clip": self.arch.clip,
        });
        self.params.to_checkpoint(arch)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.arch.get("kind").and_then(|k| k.as_str()) != Some("worker") {
            return Err(CoreError::Config("checkpoint is not a worker checkpoint".into()));
        }
        let arch: WorkerArch = serde_json::from_value(ckpt.arch.clone())?;
        let mut w = Worker::new(arch, 0)?;
        w.params.load_from(ckpt)?;
        Ok(w)
    }

    /// Runs the encoder on `batch` graphs of `nodes` nodes each. `feats` is
    /// `(batch * nodes, 4)`, graph-major.
    pub(crate) fn encode(
        &self,
        tape: &Tape,
        bound: &Bound,
        feats: Tensor,
        batch: usize,
        nodes: usize,
        bn: BnMode,
        stats: &mut Vec<(String, BatchStats)>,
    ) -> Result<Encoded> {
        let (d, heads, dk) = (self.arch.embed_dim, self.arch.heads, self.arch.d_k());
        let x = tape.constant(feats);
        let mut h = nn::linear(tape, bound, x, "W_x", Some("b_x"))?;
        let mask = (nodes > 1).then(|| {
            let mut m = Tensor::zeros(&[batch, nodes, nodes]);
            for b in 0..batch {
                for i in 0..nodes {
                    m.data_mut()[(b * nodes + i) * nodes + i] = f64::NEG_INFINITY;
                }
            }
            tape.constant(m)
        });
        let scale = 1.0 / (dk as f64).sqrt();
        for l in 0..self.arch.layers {
            let q = nn::linear(tape, bound, h, &layer(l, "W_Q"), None)?;
            let k = nn::linear(tape, bound, h, &layer(l, "W_K"), None)?;
            let v = nn::linear(tape, bound, h, &layer(l, "W_V"), None)?;
            let mut outs = Vec::with_capacity(heads);
            for j in 0..heads {
                let split = |t: Var| -> Result<Var> {
                    let s = tape.narrow(t, j * dk, dk)?;
                    Ok(tape.reshape(s, &[batch, nodes, dk])?)
                };
                let (qj, kj, vj) = (split(q)?, split(k)?, split(v)?);
                let u = tape.bmm(qj, tape.transpose(kj)?)?;
                let mut u = tape.scale(u, scale);
                if let Some(m) = mask {
                    u = tape.add(u, m)?;
                }
                let a = tape.softmax(u, 2)?;
                outs.push(tape.bmm(a, vj)?);
            }
            let cat = tape.concat(&outs, 2)?;
            let cat = tape.reshape(cat, &[batch * nodes, d])?;
            let attn = nn::linear(tape, bound, cat, &layer(l, "W_O"), None)?;
            let ff = nn::linear(tape, bound, h, &layer(l, "W_ff0"), Some(&layer(l, "b_ff0")))?;
            let ff = tape.relu(ff);
            let ff = nn::linear(tape, bound, ff, &layer(l, "W_ff1"), Some(&layer(l, "b_ff1")))?;
            let sum = tape.add(attn, ff)?;
            h = nn::batchnorm(tape, bound, &self.params, &layer(l, "bn"), sum, bn, stats)?;
        }
        let h3 = tape.reshape(h, &[batch, nodes, d])?;
        let hbar = tape.mean(h3, 1)?;
        Ok(Encoded {
            h,
            hbar,
            batch,
            nodes,
        })
    }

    /// Builds tours over the first `nodes - 1` nodes of every graph (the last
    /// node is the depot and is never chosen). With `forced`, the given tours
    /// are scored instead of choosing.
    pub(crate) fn decode(
        &self,
        tape: &Tape,
        bound: &Bound,
        enc: &Encoded,
        choice: Choice<'_>,
        keep_probs: bool,
    ) -> Result<Decoded> {
        let (d, batch) = (self.arch.embed_dim, enc.batch);
        let k = enc.nodes - 1;
        let cust_rows: Vec<usize> = (0..batch).flat_map(|b| (0..k).map(move |j| b * enc.nodes + j)).collect();
        let hc = tape.gather_rows(enc.h, &cust_rows)?;
        let keys = nn::linear(tape, bound, hc, "W_Kd", None)?;
        let keys = tape.reshape(keys, &[batch, k, d])?;
        let keys_t = tape.transpose(keys)?;
        let scale = 1.0 / (self.arch.d_k() as f64).sqrt();
        let zeros = vec![0; batch];
        let mut vf = tape.gather_rows(bound.var("v_f")?, &zeros)?;
        let mut vl = tape.gather_rows(bound.var("v_l")?, &zeros)?;
        let mut visited = vec![vec![false; k]; batch];
        let mut tours: Vec<Vec<usize>> = vec![Vec::with_capacity(k); batch];
        let mut logprob: Option<Var> = None;
        let mut probs = Vec::new();
        let mut choice = choice;
        for step in 0..k {
            let ctx = tape.concat(&[enc.hbar, vf, vl], 1)?;
            let q = nn::linear(tape, bound, ctx, "W_Qd", None)?;
            let q = tape.reshape(q, &[batch, 1, d])?;
            let u = tape.bmm(q, keys_t)?;
            let u = tape.reshape(u, &[batch, k])?;
            let mut u = tape.scale(u, scale);
            if let Some(c) = self.arch.clip {
                u = tape.scale(tape.tanh(u), c);
            }
            let mut mask = Tensor::zeros(&[batch, k]);
            for (b, row) in visited.iter().enumerate() {
                for (j, &seen) in row.iter().enumerate() {
                    if seen {
                        mask.data_mut()[b * k + j] = f64::NEG_INFINITY;
                    }
                }
            }
            let u = tape.add(u, tape.constant(mask))?;
            let lp = tape.log_softmax(u, 1)?;
            let lpv = tape.value(lp);
            let mut picked = Vec::with_capacity(batch);
            for b in 0..batch {
                let row = &lpv.data()[b * k..(b + 1) * k];
                let j = match &mut choice {
                    Choice::Greedy => nn::argmax(row),
                    Choice::Sample(rngs) => {
                        let p: Vec<f64> = row.iter().map(|v| v.exp()).collect();
                        nn::sample_index(&mut rngs[b], &p)
                    }
                    Choice::Forced(t) => t[b][step],
                };
                if visited[b][j] {
                    return Err(CoreError::Config(format!("customer {j} chosen twice in graph {b}")));
                }
                visited[b][j] = true;
                tours[b].push(j);
                picked.push(j);
            }
            if keep_probs {
                let p: Vec<f64> = lpv.data().iter().map(|v| v.exp()).collect();
                probs.push(Tensor::new(vec![batch, k], p)?);
            }
            let step_lp = tape.pick(lp, &picked)?;
            logprob = Some(match logprob {
                None => step_lp,
                Some(acc) => tape.add(acc, step_lp)?,
            });
            let rows_last: Vec<usize> = (0..batch).map(|b| b * k + picked[b]).collect();
            if step == 0 {
                vf = tape.gather_rows(hc, &rows_last)?;
            }
            vl = tape.gather_rows(hc, &rows_last)?;
        }
        let logprob = match logprob {
            Some(v) => v,
            None => tape.constant(Tensor::zeros(&[batch])),
        };
        Ok(Decoded { tours, logprob, probs })
    }
}

pub(crate) enum Choice<'a> {
    Greedy,
    Sample(&'a mut [ChaCha8Rng]),
    Forced(&'a [Vec<usize>]),
}

pub(crate) struct Encoded {
    /// `(batch * nodes, D)` final node embeddings.
    pub h: Var,
    /// `(batch, D)` mean embedding.
    pub hbar: Var,
    pub batch: usize,
    pub nodes: usize,
}

pub(crate) struct Decoded {
    /// Local customer positions per graph.
    pub tours: Vec<Vec<usize>>,
    /// `(batch,)` total log-probability of each tour.
    pub logprob: Var,
    /// Per-step probability rows when requested.
    pub probs: Vec<Tensor>,
}

/// Node features of a sub-instance, customers in the given order then the
/// depot.
pub(crate) fn push_features(out: &mut Vec<f64>, inst: &Instance, ids: &[usize]) {
    for &c in ids {
        out.extend_from_slice(&inst.customer(c).features());
    }
    out.extend_from_slice(&inst.depot.features());
}
