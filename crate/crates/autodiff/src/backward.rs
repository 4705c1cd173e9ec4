use crate::error::{AutodiffError, Result};
use crate::tape::{transpose_last2, Op, Tape, Var};
use crate::tensor::{axis_split, gemm, MatRef, Tensor};

/// Gradients of a scalar loss with respect to every node that required one.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Tensor::new(self.shapes[v.0].clone(), g.clone()).ok()
    }

    /// Gradient buffer, zero-filled when the node was unreachable.
    pub fn get_or_zero(&self, v: Var) -> Tensor {
        self.get(v)
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

impl Tape {
    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.0].value.shape().to_vec();
        if nodes[loss.0].value.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(loss_shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                grads[id] = Some(g);
                continue;
            }
            let need = |p: usize| nodes[p].requires_grad;
            let numel = |p: usize| nodes[p].value.numel();
            let out = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    let (r, k) = (av.shape()[0], av.shape()[1]);
                    let c = bv.shape()[1];
                    if need(*a) {
                        accumulate(&mut grads[*a], r * k, |da| {
                            gemm(r, c, k, MatRef::row_major(&g, c), MatRef::transposed(bv.data(), c), 1.0, da)
                        });
                    }
                    if need(*b) {
                        accumulate(&mut grads[*b], k * c, |db| {
                            gemm(k, r, c, MatRef::transposed(av.data(), k), MatRef::row_major(&g, c), 1.0, db)
                        });
                    }
                }
                Op::BatchMatMul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    let (bs, r, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                    let c = bv.shape()[2];
                    if need(*a) {
                        accumulate(&mut grads[*a], bs * r * k, |da| {
                            for i in 0..bs {
                                gemm(
                                    r,
                                    c,
                                    k,
                                    MatRef::row_major(&g[i * r * c..], c),
                                    MatRef::transposed(&bv.data()[i * k * c..], c),
                                    1.0,
                                    &mut da[i * r * k..],
                                );
                            }
                        });
                    }
                    if need(*b) {
                        accumulate(&mut grads[*b], bs * k * c, |db| {
                            for i in 0..bs {
                                gemm(
                                    k,
                                    r,
                                    c,
                                    MatRef::transposed(&av.data()[i * r * k..], k),
                                    MatRef::row_major(&g[i * r * c..], c),
                                    1.0,
                                    &mut db[i * k * c..],
                                );
                            }
                        });
                    }
                }
                Op::Transpose(a) => {
                    if need(*a) {
                        let back = transpose_last2(&g, out.shape());
                        accumulate(&mut grads[*a], back.len(), |da| add_into(da, &back));
                    }
                }
                Op::Add(a, b) => {
                    if need(*a) {
                        accumulate(&mut grads[*a], g.len(), |da| add_into(da, &g));
                    }
                    if need(*b) {
                        accumulate(&mut grads[*b], g.len(), |db| add_into(db, &g));
                    }
                }
                Op::Sub(a, b) => {
                    if need(*a) {
                        accumulate(&mut grads[*a], g.len(), |da| add_into(da, &g));
                    }
                    if need(*b) {
                        accumulate(&mut grads[*b], g.len(), |db| {
                            db.iter_mut().zip(&g).for_each(|(d, v)| *d -= v)
                        });
                    }
                }
                Op::AddRow(x, bias) => {
                    if need(*x) {
                        accumulate(&mut grads[*x], g.len(), |dx| add_into(dx, &g));
                    }
                    if need(*bias) {
                        let c = numel(*bias);
                        accumulate(&mut grads[*bias], c, |db| {
                            for row in g.chunks(c) {
                                add_into(db, row);
                            }
                        });
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    if need(*a) {
                        accumulate(&mut grads[*a], g.len(), |da| {
                            for i in 0..g.len() {
                                da[i] += g[i] * bv.data()[i];
                            }
                        });
                    }
                    if need(*b) {
                        accumulate(&mut grads[*b], g.len(), |db| {
                            for i in 0..g.len() {
                                db[i] += g[i] * av.data()[i];
                            }
                        });
                    }
                }
                Op::Scale(a, k) => {
                    if need(*a) {
                        accumulate(&mut grads[*a], g.len(), |da| {
                            da.iter_mut().zip(&g).for_each(|(d, v)| *d += k * v)
                        });
                    }
                }
                Op::AddScalar(a) | Op::Reshape(a) => {
                    if need(*a) {
                        accumulate(&mut grads[*a], g.len(), |da| add_into(da, &g));
                    }
                }
                Op::ScaleBy(x, s) => {
                    let (xv, sv) = (&nodes[*x].value, &nodes[*s].value);
                    let k = sv.data()[0];
                    if need(*x) {
                        accumulate(&mut grads[*x], g.len(), |dx| {
                            dx.iter_mut().zip(&g).for_each(|(d, v)| *d += k * v)
                        });
                    }
                    if need(*s) {
                        let ds: f64 = g.iter().zip(xv.data()).map(|(a, b)| a * b).sum();
                        accumulate(&mut grads[*s], 1, |d| d[0] += ds);
                    }
                }
                Op::Concat { parts, axis } => {
                    let (outer, total, inner) = axis_split(out.shape(), *axis);
                    let mut offset = 0;
                    for &p in parts {
                        let len = nodes[p].value.shape()[*axis];
                        if need(p) {
                            accumulate(&mut grads[p], outer * len * inner, |dp| {
                                for o in 0..outer {
                                    let src = (o * total + offset) * inner;
                                    let dst = o * len * inner;
                                    add_into(&mut dp[dst..dst + len * inner], &g[src..src + len * inner]);
                                }
                            });
                        }
                        offset += len;
                    }
                }
                Op::Sum { x, axis } | Op::Mean { x, axis } => {
                    if need(*x) {
                        let shape = nodes[*x].value.shape();
                        let (outer, len, inner) = axis_split(shape, *axis);
                        let k = if matches!(node.op, Op::Mean { .. }) {
                            1.0 / len as f64
                        } else {
                            1.0
                        };
                        accumulate(&mut grads[*x], outer * len * inner, |dx| {
                            for o in 0..outer {
                                for l in 0..len {
                                    for i in 0..inner {
                                        dx[(o * len + l) * inner + i] += k * g[o * inner + i];
                                    }
                                }
                            }
                        });
                    }
                }
                Op::SumAll(x) => {
                    if need(*x) {
                        let n = numel(*x);
                        accumulate(&mut grads[*x], n, |dx| dx.iter_mut().for_each(|d| *d += g[0]));
                    }
                }
                Op::Max { x, argmax } => {
                    if need(*x) {
                        accumulate(&mut grads[*x], numel(*x), |dx| {
                            for (o, &src) in argmax.iter().enumerate() {
                                dx[src] += g[o];
                            }
                        });
                    }
                }
                Op::Exp(x) => {
                    if need(*x) {
                        accumulate(&mut grads[*x], g.len(), |dx| {
                            for i in 0..g.len() {
                                dx[i] += g[i] * out.data()[i];
                            }
                        });
                    }
                }
                Op::Log(x) => {
                    if need(*x) {
                        let xv = &nodes[*x].value;
                        accumulate(&mut grads[*x], g.len(), |dx| {
                            for i in 0..g.len() {
                                dx[i] += g[i] / xv.data()[i];
                            }
                        });
                    }
                }
                Op::Tanh(x) => {
                    if need(*x) {
                        accumulate(&mut grads[*x], g.len(), |dx| {
                            for i in 0..g.len() {
                                let y = out.data()[i];
                                dx[i] += g[i] * (1.0 - y * y);
                            }
                        });
                    }
                }
                Op::Relu(x) => {
                    if need(*x) {
                        let xv = &nodes[*x].value;
                        accumulate(&mut grads[*x], g.len(), |dx| {
                            for i in 0..g.len() {
                                if xv.data()[i] > 0.0 {
                                    dx[i] += g[i];
                                }
                            }
                        });
                    }
                }
                Op::Softmax { x, axis } | Op::LogSoftmax { x, axis } => {
                    if need(*x) {
                        let log = matches!(node.op, Op::LogSoftmax { .. });
                        let (outer, len, inner) = axis_split(out.shape(), *axis);
                        let y = out.data();
                        accumulate(&mut grads[*x], g.len(), |dx| {
                            for o in 0..outer {
                                for i in 0..inner {
                                    let at = |l: usize| (o * len + l) * inner + i;
                                    if log {
                                        let gs: f64 = (0..len).map(|l| g[at(l)]).sum();
                                        for l in 0..len {
                                            dx[at(l)] += g[at(l)] - y[at(l)].exp() * gs;
                                        }
                                    } else {
                                        let dot: f64 = (0..len).map(|l| g[at(l)] * y[at(l)]).sum();
                                        for l in 0..len {
                                            dx[at(l)] += y[at(l)] * (g[at(l)] - dot);
                                        }
                                    }
                                }
                            }
                        });
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    train,
                } => {
                    let c = inv_std.len();
                    let r = g.len() / c.max(1);
                    let gam = nodes[*gamma].value.data();
                    let mut sum_g = vec![0.0; c];
                    let mut sum_gx = vec![0.0; c];
                    for (row_g, row_h) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            sum_g[j] += row_g[j];
                            sum_gx[j] += row_g[j] * row_h[j];
                        }
                    }
                    if need(*gamma) {
                        accumulate(&mut grads[*gamma], c, |d| add_into(d, &sum_gx));
                    }
                    if need(*beta) {
                        accumulate(&mut grads[*beta], c, |d| add_into(d, &sum_g));
                    }
                    if need(*x) {
                        accumulate(&mut grads[*x], g.len(), |dx| {
                            for (i, (row_g, row_h)) in g.chunks(c).zip(xhat.chunks(c)).enumerate() {
                                for j in 0..c {
                                    let k = gam[j] * inv_std[j];
                                    dx[i * c + j] += if *train {
                                        k / r as f64 * (r as f64 * row_g[j] - sum_g[j] - row_h[j] * sum_gx[j])
                                    } else {
                                        k * row_g[j]
                                    };
                                }
                            }
                        });
                    }
                }
                Op::GatherRows { x, idx } => {
                    if need(*x) {
                        let c = out.shape()[1];
                        accumulate(&mut grads[*x], numel(*x), |dx| {
                            for (r, &src) in idx.iter().enumerate() {
                                add_into(&mut dx[src * c..(src + 1) * c], &g[r * c..(r + 1) * c]);
                            }
                        });
                    }
                }
                Op::Pick { x, idx } => {
                    if need(*x) {
                        let c = nodes[*x].value.shape()[1];
                        accumulate(&mut grads[*x], numel(*x), |dx| {
                            for (r, &col) in idx.iter().enumerate() {
                                dx[r * c + col] += g[r];
                            }
                        });
                    }
                }
                Op::Narrow { x, start, len } => {
                    if need(*x) {
                        let last = *nodes[*x].value.shape().last().unwrap_or(&0);
                        accumulate(&mut grads[*x], numel(*x), |dx| {
                            for (row_d, row_g) in dx.chunks_mut(last).zip(g.chunks(*len)) {
                                add_into(&mut row_d[*start..*start + *len], row_g);
                            }
                        });
                    }
                }
            }
            grads[id] = Some(g);
        }
        // Interior nodes keep their gradients; only the ones that required a
        // gradient are meaningful.
        for (id, n) in nodes.iter().enumerate() {
            if !n.requires_grad {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
