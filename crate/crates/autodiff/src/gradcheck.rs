//! Finite-difference verification of the backward rules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AutodiffError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Largest `|a - b| / max(1e-8, |a| + |b|)` over all components.
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Compares the reverse-mode gradient of the scalar function `f` at `x`
/// against central differences with step `h`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&Tape, Var) -> Result<Var>,
{
    let tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let y = f(&tape, xv)?;
    if tape.value(y).numel() != 1 {
        return Err(AutodiffError::NonScalarLoss(tape.shape(y)));
    }
    let analytic = tape.backward(y)?.get_or_zero(xv).into_data();

    let eval = |t: Tensor| -> Result<f64> {
        let tape = Tape::new();
        let v = tape.leaf(t);
        let y = f(&tape, v)?;
        Ok(tape.value(y).data()[0])
    };
    let mut numeric = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        numeric.push((eval(plus)? - eval(minus)?) / (2.0 * h));
    }
    let (worst_index, max_rel_err) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &b)| rel_err(a, b))
        .enumerate()
        .fold((0, 0.0), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });
    Ok(GradCheckReport {
        analytic,
        numeric,
        max_rel_err,
        worst_index,
        tol,
    })
}

/// Result of checking one operation of the suite.
#[derive(Debug, Clone)]
pub struct OpCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const TOL_BN_TRAIN: f64 = 1e-3;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

/// Entries bounded away from zero, for kinks (relu) and ties (max).
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = rand_t(rng, shape);
    for v in t.data_mut() {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

/// `sum(w * y)` with fixed random weights, so that no gradient component
/// vanishes by symmetry.
fn weighted(tape: &Tape, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(rand_t(&mut rng, &tape.shape(y)));
    let p = tape.mul(y, w)?;
    Ok(tape.sum_all(p))
}

/// Randomized finite-difference checks for every differentiable operation
/// and for the composites the models are built from.
pub fn op_suite(seed: u64) -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let dim = |rng: &mut ChaCha8Rng| rng.gen_range(2..=5usize);
    let mut push = |name: &str, rep: GradCheckReport| {
        out.push(OpCheck {
            name: name.to_string(),
            max_rel_err: rep.max_rel_err,
            tol: rep.tol,
        })
    };

    let (r, k, c) = (dim(&mut rng), dim(&mut rng), dim(&mut rng));
    let a = rand_t(&mut rng, &[r, k]);
    let b = rand_t(&mut rng, &[k, c]);
    {
        let b = b.clone();
        let rep = grad_check(
            |t, x| {
                let bb = t.constant(b.clone());
                let y = t.matmul(x, bb)?;
                weighted(t, y, 1)
            },
            &a,
            H,
            TOL,
        )?;
        push("matmul/lhs", rep);
    }
    {
        let a = a.clone();
        let rep = grad_check(
            |t, x| {
                let aa = t.constant(a.clone());
                let y = t.matmul(aa, x)?;
                weighted(t, y, 2)
            },
            &b,
            H,
            TOL,
        )?;
        push("matmul/rhs", rep);
    }

    let bs = dim(&mut rng);
    let a3 = rand_t(&mut rng, &[bs, r, k]);
    let b3 = rand_t(&mut rng, &[bs, k, c]);
    {
        let b3 = b3.clone();
        let rep = grad_check(
            |t, x| {
                let bb = t.constant(b3.clone());
                let y = t.bmm(x, bb)?;
                weighted(t, y, 3)
            },
            &a3,
            H,
            TOL,
        )?;
        push("bmm/lhs", rep);
        let a3c = a3.clone();
        let rep = grad_check(
            |t, x| {
                let aa = t.constant(a3c.clone());
                let y = t.bmm(aa, x)?;
                weighted(t, y, 4)
            },
            &b3,
            H,
            TOL,
        )?;
        push("bmm/rhs", rep);
    }
    push(
        "transpose",
        grad_check(
            |t, x| {
                let y = t.transpose(x)?;
                weighted(t, y, 5)
            },
            &a3,
            H,
            TOL,
        )?,
    );

    let other = rand_t(&mut rng, &[r, k]);
    for (name, which) in [("add", 0), ("sub/lhs", 1), ("sub/rhs", 2), ("mul", 3)] {
        let other = other.clone();
        let rep = grad_check(
            move |t, x| {
                let o = t.constant(other.clone());
                let y = match which {
                    0 => t.add(x, o)?,
                    1 => t.sub(x, o)?,
                    2 => t.sub(o, x)?,
                    _ => t.mul(x, o)?,
                };
                weighted(t, y, 6)
            },
            &a,
            H,
            TOL,
        )?;
        push(name, rep);
    }

    let bias = rand_t(&mut rng, &[k]);
    {
        let a2 = a.clone();
        push(
            "add_row/bias",
            grad_check(
                |t, x| {
                    let xx = t.constant(a2.clone());
                    let y = t.add_row(xx, x)?;
                    weighted(t, y, 7)
                },
                &bias,
                H,
                TOL,
            )?,
        );
    }
    push(
        "scale",
        grad_check(
            |t, x| {
                let y = t.scale(x, -1.7);
                let y = t.add_scalar(y, 0.3);
                weighted(t, y, 8)
            },
            &a,
            H,
            TOL,
        )?,
    );
    {
        let a2 = a.clone();
        push(
            "scale_by/scalar",
            grad_check(
                |t, s| {
                    let xx = t.constant(a2.clone());
                    let y = t.scale_by(xx, s)?;
                    weighted(t, y, 9)
                },
                &Tensor::scalar(0.7),
                H,
                TOL,
            )?,
        );
        let s = Tensor::scalar(1.3);
        push(
            "scale_by/tensor",
            grad_check(
                |t, x| {
                    let ss = t.constant(s.clone());
                    let y = t.scale_by(x, ss)?;
                    weighted(t, y, 10)
                },
                &a,
                H,
                TOL,
            )?,
        );
    }

    for axis in 0..3 {
        let other = rand_t(&mut rng, &{
            let mut s = vec![bs, r, k];
            s[axis] += 1;
            s
        });
        push(
            &format!("concat/axis{axis}"),
            grad_check(
                |t, x| {
                    let o = t.constant(other.clone());
                    let y = t.concat(&[x, o, x], axis)?;
                    weighted(t, y, 11)
                },
                &a3,
                H,
                TOL,
            )?,
        );
        push(
            &format!("sum/axis{axis}"),
            grad_check(
                |t, x| {
                    let y = t.sum(x, axis)?;
                    weighted(t, y, 12)
                },
                &a3,
                H,
                TOL,
            )?,
        );
        push(
            &format!("mean/axis{axis}"),
            grad_check(
                |t, x| {
                    let y = t.mean(x, axis)?;
                    weighted(t, y, 13)
                },
                &a3,
                H,
                TOL,
            )?,
        );
        let spread = rand_away_from_zero(&mut rng, &[bs, r, k]);
        push(
            &format!("max/axis{axis}"),
            grad_check(
                |t, x| {
                    let y = t.max(x, axis)?;
                    weighted(t, y, 14)
                },
                &spread,
                H,
                TOL,
            )?,
        );
        push(
            &format!("softmax/axis{axis}"),
            grad_check(
                |t, x| {
                    let y = t.softmax(x, axis)?;
                    weighted(t, y, 15)
                },
                &a3,
                H,
                TOL,
            )?,
        );
        push(
            &format!("log_softmax/axis{axis}"),
            grad_check(
                |t, x| {
                    let y = t.log_softmax(x, axis)?;
                    weighted(t, y, 16)
                },
                &a3,
                H,
                TOL,
            )?,
        );
    }

    push(
        "exp",
        grad_check(
            |t, x| {
                let y = t.exp(x);
                weighted(t, y, 17)
            },
            &a,
            H,
            TOL,
        )?,
    );
    let positive = {
        let mut p = rand_t(&mut rng, &[r, k]);
        p.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.5);
        p
    };
    push(
        "log",
        grad_check(
            |t, x| {
                let y = t.log(x);
                weighted(t, y, 18)
            },
            &positive,
            H,
            TOL,
        )?,
    );
    push(
        "tanh",
        grad_check(
            |t, x| {
                let y = t.tanh(x);
                weighted(t, y, 19)
            },
            &a,
            H,
            TOL,
        )?,
    );
    let spread = rand_away_from_zero(&mut rng, &[r, k]);
    push(
        "relu",
        grad_check(
            |t, x| {
                let y = t.relu(x);
                weighted(t, y, 20)
            },
            &spread,
            H,
            TOL,
        )?,
    );

    let rows = dim(&mut rng) + 3;
    let bn_x = rand_t(&mut rng, &[rows, c]);
    let gamma = {
        let mut g = rand_t(&mut rng, &[c]);
        g.data_mut().iter_mut().for_each(|v| *v += 1.5);
        g
    };
    let beta = rand_t(&mut rng, &[c]);
    let (rm, rv): (Vec<f64>, Vec<f64>) = (0..c).map(|_| (rng.gen_range(-0.5..0.5), rng.gen_range(0.5..2.0))).unzip();
    {
        let (g2, b2) = (gamma.clone(), beta.clone());
        push(
            "batchnorm_train/x",
            grad_check(
                |t, x| {
                    let (g, b) = (t.constant(g2.clone()), t.constant(b2.clone()));
                    let (y, _) = t.batchnorm_train(x, g, b, 1e-5)?;
                    weighted(t, y, 21)
                },
                &bn_x,
                H,
                TOL_BN_TRAIN,
            )?,
        );
        let (x2, b2) = (bn_x.clone(), beta.clone());
        push(
            "batchnorm_train/gamma",
            grad_check(
                |t, g| {
                    let (x, b) = (t.constant(x2.clone()), t.constant(b2.clone()));
                    let (y, _) = t.batchnorm_train(x, g, b, 1e-5)?;
                    weighted(t, y, 22)
                },
                &gamma,
                H,
                TOL_BN_TRAIN,
            )?,
        );
        let (g2, b2) = (gamma.clone(), beta.clone());
        let (rm2, rv2) = (rm.clone(), rv.clone());
        push(
            "batchnorm_eval/x",
            grad_check(
                |t, x| {
                    let (g, b) = (t.constant(g2.clone()), t.constant(b2.clone()));
                    let y = t.batchnorm_eval(x, g, b, &rm2, &rv2, 1e-5)?;
                    weighted(t, y, 23)
                },
                &bn_x,
                H,
                TOL,
            )?,
        );
        let x2 = bn_x.clone();
        push(
            "batchnorm_eval/beta",
            grad_check(
                |t, b| {
                    let (x, g) = (t.constant(x2.clone()), t.constant(gamma.clone()));
                    let y = t.batchnorm_eval(x, g, b, &rm, &rv, 1e-5)?;
                    weighted(t, y, 24)
                },
                &beta,
                H,
                TOL,
            )?,
        );
    }

    let idx: Vec<usize> = (0..r + 2).map(|_| rng.gen_range(0..r)).collect();
    push(
        "gather_rows",
        grad_check(
            |t, x| {
                let y = t.gather_rows(x, &idx)?;
                weighted(t, y, 25)
            },
            &a,
            H,
            TOL,
        )?,
    );
    let picks: Vec<usize> = (0..r).map(|_| rng.gen_range(0..k)).collect();
    push(
        "pick",
        grad_check(
            |t, x| {
                let y = t.pick(x, &picks)?;
                weighted(t, y, 26)
            },
            &a,
            H,
            TOL,
        )?,
    );
    push(
        "reshape",
        grad_check(
            |t, x| {
                let y = t.reshape(x, &[bs * r, k])?;
                weighted(t, y, 27)
            },
            &a3,
            H,
            TOL,
        )?,
    );
    push(
        "narrow",
        grad_check(
            |t, x| {
                let y = t.narrow(x, 1, k - 1)?;
                weighted(t, y, 28)
            },
            &a3,
            H,
            TOL,
        )?,
    );

    // softmax cross-entropy: -mean_i log softmax(x)_i[label_i]
    let labels: Vec<usize> = (0..r).map(|_| rng.gen_range(0..k)).collect();
    push(
        "softmax_cross_entropy",
        grad_check(
            |t, x| {
                let lp = t.log_softmax(x, 1)?;
                let picked = t.pick(lp, &labels)?;
                let s = t.mean(picked, 0)?;
                Ok(t.scale(s, -1.0))
            },
            &a,
            H,
            TOL,
        )?,
    );

    // Masked attention step as used by the decoder.
    let mask = {
        let mut m = Tensor::zeros(&[r, k]);
        for i in 0..r {
            m.data_mut()[i * k + (i % k)] = f64::NEG_INFINITY;
        }
        m
    };
    push(
        "masked_log_softmax",
        grad_check(
            |t, x| {
                let mm = t.constant(mask.clone());
                let y = t.add(x, mm)?;
                let lp = t.log_softmax(y, 1)?;
                let pick: Vec<usize> = (0..r).map(|i| (i + 1) % k).collect();
                let p = t.pick(lp, &pick)?;
                Ok(t.sum_all(p))
            },
            &a,
            H,
            TOL,
        )?,
    );

    // Three-layer MLP with batch norm: gradient w.r.t. the first weight.
    let (d0, d1, d2) = (3, dim(&mut rng) + 1, dim(&mut rng) + 1);
    let input = rand_t(&mut rng, &[6, d0]);
    let w0 = rand_t(&mut rng, &[d0, d1]);
    let w1 = rand_t(&mut rng, &[d1, d2]);
    let w2 = rand_t(&mut rng, &[d2, 1]);
    let g1 = Tensor::ones(&[d1]);
    let b1 = Tensor::zeros(&[d1]);
    let mlp = |t: &Tape, w0v: Var, bn: bool| -> Result<Var> {
        let x = t.constant(input.clone());
        let h = t.matmul(x, w0v)?;
        let h = if bn {
            let (g, b) = (t.constant(g1.clone()), t.constant(b1.clone()));
            t.batchnorm_train(h, g, b, 1e-5)?.0
        } else {
            h
        };
        let h = t.tanh(h);
        let w1v = t.constant(w1.clone());
        let h = t.relu(t.matmul(h, w1v)?);
        let w2v = t.constant(w2.clone());
        let y = t.matmul(h, w2v)?;
        Ok(t.sum_all(y))
    };
    push("mlp3", grad_check(|t, w| mlp(t, w, false), &w0, H, TOL)?);
    push("mlp3_batchnorm", grad_check(|t, w| mlp(t, w, true), &w0, H, TOL_BN_TRAIN)?);

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_agrees_exactly() {
        let x = Tensor::new(vec![3], vec![0.3, -1.2, 2.0]).unwrap();
        let rep = grad_check(
            |t, x| {
                let y = t.scale(x, 2.5);
                Ok(t.sum_all(y))
            },
            &x,
            1e-5,
            1e-9,
        )
        .unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert!(rep.analytic.iter().all(|&a| a == 2.5));
    }

    #[test]
    fn quadratic_gradient() {
        let x = Tensor::new(vec![2], vec![0.5, 1.5]).unwrap();
        let rep = grad_check(
            |t, x| {
                let y = t.mul(x, x)?;
                Ok(t.sum_all(y))
            },
            &x,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(rep.passed());
        assert!((rep.analytic[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn suite_passes() {
        for seed in 0..3 {
            for check in op_suite(seed).unwrap() {
                assert!(check.passed(), "seed {seed}: {check:?}");
            }
        }
    }
}
