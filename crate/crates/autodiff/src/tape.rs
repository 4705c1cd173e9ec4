//! Operation recording.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Nodes are
//! appended in evaluation order, so the node list is already a topological
//! order of the DAG and [`Tape::backward`] walks it once, in reverse.

use std::cell::RefCell;
use std::sync::Arc;

use crate::error::{AutodiffError, Result};
use crate::tensor::{axis_split, gemm, MatRef, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul(usize, usize),
    BatchMatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    ScaleBy(usize, usize),
    Concat { parts: Vec<usize>, axis: usize },
    Sum { x: usize, axis: usize },
    Mean { x: usize, axis: usize },
    SumAll(usize),
    Max { x: usize, argmax: Vec<usize> },
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Relu(usize),
    Softmax { x: usize, axis: usize },
    LogSoftmax { x: usize, axis: usize },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    GatherRows { x: usize, idx: Vec<usize> },
    Pick { x: usize, idx: Vec<usize> },
    Reshape(usize),
    Narrow { x: usize, start: usize, len: usize },
}

pub(crate) struct Node {
    pub value: Arc<Tensor>,
    pub op: Op,
    pub requires_grad: bool,
}

/// Batch statistics produced by a training-mode batch norm, used by callers
/// to update running estimates.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance.
    pub var: Vec<f64>,
}

#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn invalid(op: &'static str, shape: &[usize], reason: &str) -> AutodiffError {
    AutodiffError::InvalidShape {
        op,
        shape: shape.to_vec(),
        reason: reason.to_string(),
    }
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(invalid(op, shape, &format!("axis {axis} out of range")));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn rg(&self, vars: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|&v| nodes[v].requires_grad)
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a shared tensor without copying its buffer.
    pub fn shared(&self, value: Arc<Tensor>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Value of a one-element node.
    pub fn item(&self, v: Var) -> Option<f64> {
        self.nodes.borrow()[v.0].value.item()
    }

    /// `(r x k) @ (k x c)`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (r, k, c) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; r * c];
        gemm(
            r,
            k,
            c,
            MatRef::row_major(av.data(), k),
            MatRef::row_major(bv.data(), c),
            0.0,
            &mut out,
        );
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(Tensor::new(vec![r, c], out)?, Op::MatMul(a.0, b.0), rg))
    }

    /// `(B x r x k) @ (B x k x c)`.
    pub fn bmm(&self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(mismatch("bmm", sa, sb));
        }
        let (bs, r, k, c) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * r * c];
        for i in 0..bs {
            gemm(
                r,
                k,
                c,
                MatRef::row_major(&av.data()[i * r * k..(i + 1) * r * k], k),
                MatRef::row_major(&bv.data()[i * k * c..(i + 1) * k * c], c),
                0.0,
                &mut out[i * r * c..(i + 1) * r * c],
            );
        }
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(
            Tensor::new(vec![bs, r, c], out)?,
            Op::BatchMatMul(a.0, b.0),
            rg,
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let s = av.shape();
        if s.len() < 2 {
            return Err(invalid("transpose", s, "rank must be at least 2"));
        }
        let out = transpose_last2(av.data(), s);
        let mut shape = s.to_vec();
        let n = shape.len();
        shape.swap(n - 2, n - 1);
        let rg = self.rg(&[a.0]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Transpose(a.0), rg))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch(op, av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a.0, b.0), self.rg(&[a.0, b.0])))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a.0, b.0), self.rg(&[a.0, b.0])))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a.0, b.0), self.rg(&[a.0, b.0])))
    }

    /// Adds a bias of shape `[c]` (or `[1, c]`) to every row of `x (.., c)`.
    pub fn add_row(&self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let c = *xv.shape().last().unwrap_or(&0);
        if bv.numel() != c || bv.shape().iter().rev().skip(1).any(|&d| d != 1) {
            return Err(mismatch("add_row", xv.shape(), bv.shape()));
        }
        let b = bv.data();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % c])
            .collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(t, Op::AddRow(x.0, bias.0), self.rg(&[x.0, bias.0])))
    }

    pub fn scale(&self, x: Var, k: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * k).collect();
        let t = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Scale(x.0, k), self.rg(&[x.0]))
    }

    pub fn add_scalar(&self, x: Var, k: f64) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v + k).collect();
        let t = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::AddScalar(x.0), self.rg(&[x.0]))
    }

    /// Multiplies every entry of `x` by the one-element tensor `s`.
    pub fn scale_by(&self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        let k = sv
            .item()
            .ok_or_else(|| mismatch("scale_by", xv.shape(), sv.shape()))?;
        let data = xv.data().iter().map(|v| v * k).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        Ok(self.push(t, Op::ScaleBy(x.0, s.0), self.rg(&[x.0, s.0])))
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        let vals: Vec<Arc<Tensor>> = parts.iter().map(|&p| self.value(p)).collect();
        let first = vals
            .first()
            .ok_or_else(|| invalid("concat", &[], "no inputs"))?
            .shape()
            .to_vec();
        check_axis("concat", &first, axis)?;
        let mut total = 0;
        for v in &vals {
            let s = v.shape();
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", &first, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &vals {
                let chunk = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&ids);
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { parts: ids, axis }, rg))
    }

    fn reduce(&self, op: &'static str, x: Var, axis: usize) -> Result<(Tensor, usize)> {
        let xv = self.value(x);
        check_axis(op, xv.shape(), axis)?;
        let (outer, len, inner) = axis_split(xv.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        let d = xv.data();
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += d[base + i];
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok((Tensor::new(shape, out)?, len))
    }

    /// Sums over `axis`, removing it.
    pub fn sum(&self, x: Var, axis: usize) -> Result<Var> {
        let (t, _) = self.reduce("sum", x, axis)?;
        Ok(self.push(t, Op::Sum { x: x.0, axis }, self.rg(&[x.0])))
    }

    /// Averages over `axis`, removing it.
    pub fn mean(&self, x: Var, axis: usize) -> Result<Var> {
        let (mut t, len) = self.reduce("mean", x, axis)?;
        if len == 0 {
            return Err(invalid("mean", &self.shape(x), "empty axis"));
        }
        let k = 1.0 / len as f64;
        t.data_mut().iter_mut().for_each(|v| *v *= k);
        Ok(self.push(t, Op::Mean { x: x.0, axis }, self.rg(&[x.0])))
    }

    /// Sum of every entry, as a one-element tensor.
    pub fn sum_all(&self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x.0), self.rg(&[x.0]))
    }

    /// Maximum over `axis`, removing it. The gradient flows to the first
    /// maximizing entry.
    pub fn max(&self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        check_axis("max", xv.shape(), axis)?;
        let (outer, len, inner) = axis_split(xv.shape(), axis);
        if len == 0 {
            return Err(invalid("max", xv.shape(), "empty axis"));
        }
        let d = xv.data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                for l in 0..len {
                    let idx = (o * len + l) * inner + i;
                    if d[idx] > out[o * inner + i] || l == 0 {
                        out[o * inner + i] = d[idx];
                        argmax[o * inner + i] = idx;
                    }
                }
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let rg = self.rg(&[x.0]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Max { x: x.0, argmax }, rg))
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| f(v)).collect();
        Tensor::new(xv.shape().to_vec(), data).expect("same shape")
    }

    pub fn exp(&self, x: Var) -> Var {
        let t = self.map(x, f64::exp);
        self.push(t, Op::Exp(x.0), self.rg(&[x.0]))
    }

    pub fn log(&self, x: Var) -> Var {
        let t = self.map(x, f64::ln);
        self.push(t, Op::Log(x.0), self.rg(&[x.0]))
    }

    pub fn tanh(&self, x: Var) -> Var {
        let t = self.map(x, f64::tanh);
        self.push(t, Op::Tanh(x.0), self.rg(&[x.0]))
    }

    pub fn relu(&self, x: Var) -> Var {
        let t = self.map(x, |v| v.max(0.0));
        self.push(t, Op::Relu(x.0), self.rg(&[x.0]))
    }

    /// Softmax along `axis`. Entries equal to `-inf` receive probability 0.
    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let t = self.softmax_impl("softmax", x, axis, false)?;
        Ok(self.push(t, Op::Softmax { x: x.0, axis }, self.rg(&[x.0])))
    }

    pub fn log_softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let t = self.softmax_impl("log_softmax", x, axis, true)?;
        Ok(self.push(t, Op::LogSoftmax { x: x.0, axis }, self.rg(&[x.0])))
    }

    fn softmax_impl(&self, op: &'static str, x: Var, axis: usize, log: bool) -> Result<Tensor> {
        let xv = self.value(x);
        check_axis(op, xv.shape(), axis)?;
        let (outer, len, inner) = axis_split(xv.shape(), axis);
        let d = xv.data();
        let mut out = vec![0.0; d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let m = (0..len).map(|l| d[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..len).map(|l| (d[at(l)] - m).exp()).sum();
                let lz = z.ln();
                for l in 0..len {
                    let shifted = d[at(l)] - m;
                    out[at(l)] = if log { shifted - lz } else { shifted.exp() / z };
                }
            }
        }
        Tensor::new(xv.shape().to_vec(), out)
    }

    fn bn_check(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize)> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 2 {
            return Err(invalid("batchnorm", s, "expects a rank-2 input"));
        }
        for p in [gamma, beta] {
            let ps = self.shape(p);
            if ps.iter().product::<usize>() != s[1] {
                return Err(mismatch("batchnorm", s, &ps));
            }
        }
        Ok((s[0], s[1]))
    }

    /// Batch norm over the rows of `x (r x c)` using the batch statistics.
    pub fn batchnorm_train(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (r, c) = self.bn_check(x, gamma, beta)?;
        let xv = self.value(x);
        let d = xv.data();
        let mut mean = vec![0.0; c];
        for row in d.chunks(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= r.max(1) as f64);
        let mut var = vec![0.0; c];
        for row in d.chunks(c) {
            for j in 0..c {
                let e = row[j] - mean[j];
                var[j] += e * e;
            }
        }
        let biased: Vec<f64> = var.iter().map(|v| v / r.max(1) as f64).collect();
        let unbiased: Vec<f64> = var.iter().map(|v| v / r.saturating_sub(1).max(1) as f64).collect();
        let inv_std: Vec<f64> = biased.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let v = self.bn_apply(x, gamma, beta, &mean, inv_std, true)?;
        Ok((
            v,
            BatchStats {
                mean,
                var: unbiased,
            },
        ))
    }

    /// Batch norm with fixed statistics.
    pub fn batchnorm_eval(&self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64], eps: f64) -> Result<Var> {
        let (_, c) = self.bn_check(x, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(mismatch("batchnorm", &[c], &[mean.len(), var.len()]));
        }
        let inv_std = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.bn_apply(x, gamma, beta, mean, inv_std, false)
    }

    fn bn_apply(&self, x: Var, gamma: Var, beta: Var, mean: &[f64], inv_std: Vec<f64>, train: bool) -> Result<Var> {
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let c = mean.len();
        let mut xhat = Vec::with_capacity(xv.numel());
        let mut out = Vec::with_capacity(xv.numel());
        for row in xv.data().chunks(c) {
            for j in 0..c {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(g.data()[j] * h + b.data()[j]);
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(&[x.0, gamma.0, beta.0]);
        Ok(self.push(
            t,
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
                train,
            },
            rg,
        ))
    }

    /// Selects rows of a rank-2 tensor; indices may repeat.
    pub fn gather_rows(&self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 2 {
            return Err(invalid("gather_rows", s, "expects a rank-2 input"));
        }
        let c = s[1];
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= s[0] {
                return Err(AutodiffError::IndexOutOfBounds {
                    op: "gather_rows",
                    index: i,
                    len: s[0],
                });
            }
            out.extend_from_slice(xv.row(i));
        }
        let t = Tensor::new(vec![idx.len(), c], out)?;
        let rg = self.rg(&[x.0]);
        Ok(self.push(
            t,
            Op::GatherRows {
                x: x.0,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// `out[i] = x[i, idx[i]]` for a rank-2 `x`.
    pub fn pick(&self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 2 || s[0] != idx.len() {
            return Err(mismatch("pick", s, &[idx.len()]));
        }
        let mut out = Vec::with_capacity(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            if i >= s[1] {
                return Err(AutodiffError::IndexOutOfBounds {
                    op: "pick",
                    index: i,
                    len: s[1],
                });
            }
            out.push(xv.data()[r * s[1] + i]);
        }
        let t = Tensor::new(vec![idx.len()], out)?;
        let rg = self.rg(&[x.0]);
        Ok(self.push(
            t,
            Op::Pick {
                x: x.0,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = (*self.value(x)).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x.0), self.rg(&[x.0])))
    }

    /// Slice `[start, start + len)` of the last axis.
    pub fn narrow(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape();
        let last = *s.last().unwrap_or(&0);
        if start + len > last {
            return Err(invalid("narrow", s, &format!("range {start}..{} exceeds last axis", start + len)));
        }
        let mut out = Vec::with_capacity(xv.numel() / last.max(1) * len);
        for row in xv.data().chunks(last) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let mut shape = s.to_vec();
        *shape.last_mut().expect("rank >= 1") = len;
        let rg = self.rg(&[x.0]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Narrow { x: x.0, start, len }, rg))
    }
}

pub(crate) fn transpose_last2(d: &[f64], shape: &[usize]) -> Vec<f64> {
    let n = shape.len();
    let (r, c) = (shape[n - 2], shape[n - 1]);
    let batch: usize = shape[..n - 2].iter().product();
    let mut out = vec![0.0; d.len()];
    for b in 0..batch {
        let off = b * r * c;
        for i in 0..r {
            for j in 0..c {
                out[off + j * r + i] = d[off + i * c + j];
            }
        }
    }
    out
}
