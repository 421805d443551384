//! Reverse-mode gradient tape.
//!
//! Every operation evaluates eagerly, appends a node, and returns a [`Var`]
//! handle. [`Tape::backward`] walks the nodes in exact reverse order and
//! returns the gradient of every parameter that took part. A tape can be
//! used for one backward pass only.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::param::{Gradients, ParamId, ParamStore};
use crate::tensor::{axis_split, gemm_acc, gemm_nt_acc, gemm_tn_acc, Precision, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Adjoint rule for [`Tape::custom`]: given the output gradient, the input
/// values and the output value, returns one gradient per input.
pub type CustomBackward = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Tensor>>;

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBroadcast(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Mean {
        x: Var,
        axis: usize,
    },
    Sum(Var),
    Reshape(Var),
    Custom {
        inputs: Vec<Var>,
        backward: CustomBackward,
    },
}

struct Node {
    // `None` for parameter leaves, whose value lives in the store.
    value: Option<Tensor>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    precision: Precision,
    nodes: Vec<Node>,
    consumed: bool,
    macs: u64,
}

const SQRT_2: f64 = core::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2))
}

#[inline]
fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * libm::exp(-0.5 * x * x)
}

/// Exact GELU, `x·Φ(x)` with Φ the standard normal CDF.
#[inline]
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

/// Derivative of [`gelu_scalar`].
#[inline]
pub fn gelu_grad_scalar(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

impl<'p> Tape<'p> {
    /// A tape whose precision follows the store.
    pub fn new(params: &'p ParamStore) -> Self {
        Self::with_precision(params, params.precision())
    }

    pub fn with_precision(params: &'p ParamStore, precision: Precision) -> Self {
        Tape {
            params,
            precision,
            nodes: Vec::new(),
            consumed: false,
            macs: 0,
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn store(&self) -> &'p ParamStore {
        self.params
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulate operations executed by `matmul` so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.params.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, op_name: &'static str, mut value: Tensor, op: Op) -> Result<Var> {
        self.precision.round_all(value.data_mut());
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant (no gradient flows out of it).
    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.push("input", value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    fn check_2d(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let t = self.value(v);
        if !t.is_2d() {
            return Err(Error::dim(op, alloc::format!("expected 2-D, got {:?}", t.shape())));
        }
        Ok((t.rows(), t.cols()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.check_2d("matmul", a)?;
        let (k2, n) = self.check_2d("matmul", b)?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.macs += (m * k * n) as u64;
        let t = Tensor::new(&[m, n], out)?;
        self.push("matmul", t, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.check_2d("transpose", x)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        let t = Tensor::new(&[n, m], out)?;
        self.push("transpose", t, Op::Transpose(x))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        self.push("add", t, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        self.push("sub", t, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        self.push("mul", t, Op::Mul(a, b))
    }

    /// `a[m×n] + b` where `b` is `[1×n]` (added to every row) or `[m×1]`
    /// (added to every column).
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.check_2d("add_broadcast", a)?;
        let bs = self.shape(b).to_vec();
        let ta = self.value(a).data();
        let tb = self.value(b).data();
        let mut out = ta.to_vec();
        if bs == [1, n] {
            for row in out.chunks_exact_mut(n) {
                for (o, &bv) in row.iter_mut().zip(tb) {
                    *o += bv;
                }
            }
        } else if bs == [m, 1] {
            for (row, &bv) in out.chunks_exact_mut(n).zip(tb) {
                for o in row {
                    *o += bv;
                }
            }
        } else {
            return Err(Error::shape("add_broadcast", &[m, n], &bs));
        }
        let t = Tensor::new(&[m, n], out)?;
        self.push("add_broadcast", t, Op::AddBroadcast(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let t = self.value(x).map(|v| v * factor);
        self.push("scale", t, Op::Scale(x, factor))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(gelu_scalar);
        self.push("gelu", t, Op::Gelu(x))
    }

    /// Normalizes each row over the last axis, then applies `gamma·x̂ + beta`.
    /// Variance is the population variance.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let c = tx.last_dim();
        if tx.rank() == 0 || c == 0 {
            return Err(Error::dim("layer_norm", "empty channel axis"));
        }
        let (tg, tb) = (self.value(gamma), self.value(beta));
        if tg.len() != c || tb.len() != c {
            return Err(Error::shape("layer_norm", tx.shape(), tg.shape()));
        }
        let rows = tx.len() / c;
        let mut xhat = vec![0.0; tx.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.len()];
        for r in 0..rows {
            let row = &tx.data()[r * c..(r + 1) * c];
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let inv = 1.0 / libm::sqrt(var + eps);
            inv_std[r] = inv;
            for j in 0..c {
                let h = (row[j] - mu) * inv;
                xhat[r * c + j] = h;
                out[r * c + j] = tg.data()[j] * h + tb.data()[j];
            }
        }
        let t = Tensor::new(tx.shape(), out)?;
        self.push(
            "layer_norm",
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", alloc::format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let t = Tensor::new(&shape, out)?;
        self.push(
            "concat",
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        )
    }

    pub fn slice(&mut self, x: Var, axis: usize, range: Range<usize>) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || range.start >= range.end || range.end > s[axis] {
            return Err(Error::dim(
                "slice",
                alloc::format!("range {:?} on axis {} of {:?}", range, axis, s),
            ));
        }
        let (outer, extent, inner) = axis_split(&s, axis);
        let len = range.end - range.start;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * extent * inner;
            out.extend_from_slice(&src[base + range.start * inner..base + range.end * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let t = Tensor::new(&shape, out)?;
        self.push(
            "slice",
            t,
            Op::Slice {
                x,
                axis,
                start: range.start,
            },
        )
    }

    /// Mean over `axis`; the axis is removed from the shape (a rank-1 input
    /// yields shape `[1]`).
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::dim("mean", alloc::format!("axis {axis} out of range")));
        }
        let (outer, extent, inner) = axis_split(&s, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for e in 0..extent {
                let row = &src[(o * extent + e) * inner..(o * extent + e + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        let n = extent as f64;
        for v in &mut out {
            *v /= n;
        }
        let mut shape = s;
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let t = Tensor::new(&shape, out)?;
        self.push("mean", t, Op::Mean { x, axis })
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        self.push("reshape", t, Op::Reshape(x))
    }

    /// Records an operation with a caller-supplied value and adjoint rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, backward: CustomBackward) -> Result<Var> {
        self.push(
            "custom",
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                backward,
            },
        )
    }

    /// Runs the adjoint sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        self.consumed = true;
        let precision = self.precision;
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        let mut out = Gradients::empty(self.params.len());

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let emit = |grads: &mut Vec<Option<Tensor>>, v: Var, mut d: Tensor| {
                precision.round_all(d.data_mut());
                match &mut grads[v.0] {
                    Some(acc) => {
                        acc.add_assign(&d);
                        precision.round_all(acc.data_mut());
                    }
                    slot @ None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => match &mut out.per_param[id.0] {
                    Some(acc) => {
                        acc.add_assign(&g);
                        precision.round_all(acc.data_mut());
                    }
                    slot @ None => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    let mut da = vec![0.0; m * k];
                    gemm_nt_acc(g.data(), tb.data(), &mut da, m, n, k);
                    let mut db = vec![0.0; k * n];
                    gemm_tn_acc(ta.data(), g.data(), &mut db, m, k, n);
                    emit(&mut grads, *a, Tensor::new(&[m, k], da)?);
                    emit(&mut grads, *b, Tensor::new(&[k, n], db)?);
                }
                Op::Transpose(x) => {
                    let (n, m) = (g.rows(), g.cols());
                    let mut d = vec![0.0; m * n];
                    for i in 0..n {
                        for j in 0..m {
                            d[j * n + i] = g.data()[i * m + j];
                        }
                    }
                    emit(&mut grads, *x, Tensor::new(&[m, n], d)?);
                }
                Op::Add(a, b) => {
                    emit(&mut grads, *a, g.clone());
                    emit(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    emit(&mut grads, *b, g.map(|v| -v));
                    emit(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let da = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    let db = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    emit(&mut grads, *a, Tensor::new(ta.shape(), da)?);
                    emit(&mut grads, *b, Tensor::new(tb.shape(), db)?);
                }
                Op::AddBroadcast(a, b) => {
                    let bs = self.shape(*b).to_vec();
                    let n = g.cols();
                    let db = if bs[0] == 1 {
                        let mut acc = vec![0.0; n];
                        for row in g.data().chunks_exact(n) {
                            for (s, &v) in acc.iter_mut().zip(row) {
                                *s += v;
                            }
                        }
                        acc
                    } else {
                        g.data().chunks_exact(n).map(|row| row.iter().sum()).collect()
                    };
                    emit(&mut grads, *b, Tensor::new(&bs, db)?);
                    emit(&mut grads, *a, g);
                }
                Op::Scale(x, f) => {
                    let f = *f;
                    emit(&mut grads, *x, g.map(|v| v * f));
                }
                Op::Gelu(x) => {
                    let tx = self.value(*x);
                    let d = g
                        .data()
                        .iter()
                        .zip(tx.data())
                        .map(|(&gv, &xv)| gv * gelu_grad_scalar(xv))
                        .collect();
                    emit(&mut grads, *x, Tensor::new(tx.shape(), d)?);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let tg = self.value(*gamma);
                    let c = tg.len();
                    let rows = g.len() / c;
                    let mut dx = vec![0.0; g.len()];
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    let mut dxhat = vec![0.0; c];
                    for r in 0..rows {
                        let gr = &g.data()[r * c..(r + 1) * c];
                        let hr = &xhat[r * c..(r + 1) * c];
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for j in 0..c {
                            dgamma[j] += gr[j] * hr[j];
                            dbeta[j] += gr[j];
                            dxhat[j] = gr[j] * tg.data()[j];
                            mean_d += dxhat[j];
                            mean_dh += dxhat[j] * hr[j];
                        }
                        mean_d /= c as f64;
                        mean_dh /= c as f64;
                        let inv = inv_std[r];
                        for j in 0..c {
                            dx[r * c + j] = inv * (dxhat[j] - mean_d - hr[j] * mean_dh);
                        }
                    }
                    let gshape = tg.shape().to_vec();
                    let bshape = self.shape(*beta).to_vec();
                    emit(&mut grads, *x, Tensor::new(g.shape(), dx)?);
                    emit(&mut grads, *gamma, Tensor::new(&gshape, dgamma)?);
                    emit(&mut grads, *beta, Tensor::new(&bshape, dbeta)?);
                }
                Op::Concat { inputs, axis } => {
                    let (outer, _, inner) = axis_split(g.shape(), *axis);
                    let mut offset = 0;
                    let total = g.shape()[*axis];
                    for &v in inputs {
                        let vs = self.shape(v).to_vec();
                        let ext = vs[*axis];
                        let mut d = Vec::with_capacity(vs.iter().product());
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            d.extend_from_slice(&g.data()[base..base + ext * inner]);
                        }
                        offset += ext;
                        emit(&mut grads, v, Tensor::new(&vs, d)?);
                    }
                }
                Op::Slice { x, axis, start } => {
                    let xs = self.shape(*x).to_vec();
                    let (outer, extent, inner) = axis_split(&xs, *axis);
                    let len = g.shape()[*axis];
                    let mut d = vec![0.0; xs.iter().product()];
                    for o in 0..outer {
                        let dst = (o * extent + start) * inner;
                        let src = o * len * inner;
                        d[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
                    }
                    emit(&mut grads, *x, Tensor::new(&xs, d)?);
                }
                Op::Mean { x, axis } => {
                    let xs = self.shape(*x).to_vec();
                    let (outer, extent, inner) = axis_split(&xs, *axis);
                    let n = extent as f64;
                    let mut d = vec![0.0; xs.iter().product()];
                    for o in 0..outer {
                        for e in 0..extent {
                            let dst = (o * extent + e) * inner;
                            for i in 0..inner {
                                d[dst + i] = g.data()[o * inner + i] / n;
                            }
                        }
                    }
                    emit(&mut grads, *x, Tensor::new(&xs, d)?);
                }
                Op::Sum(x) => {
                    let xs = self.shape(*x).to_vec();
                    emit(&mut grads, *x, Tensor::full(&xs, g.data()[0]));
                }
                Op::Reshape(x) => {
                    let xs = self.shape(*x).to_vec();
                    emit(&mut grads, *x, g.reshape(&xs)?);
                }
                Op::Custom { inputs, backward } => {
                    let vals: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                    let out_val = node.value.as_ref().expect("custom node value");
                    let ds = backward(&g, &vals, out_val);
                    if ds.len() != inputs.len() {
                        return Err(Error::dim("custom", "adjoint count differs from input count"));
                    }
                    for (&v, d) in inputs.iter().zip(ds) {
                        if d.shape() != self.shape(v) {
                            return Err(Error::shape("custom", self.shape(v), d.shape()));
                        }
                        emit(&mut grads, v, d);
                    }
                }
            }
        }
        for g in out.per_param.iter().flatten() {
            if !g.all_finite() {
                return Err(Error::NonFinite { op: "backward" });
            }
        }
        Ok(out)
    }
}
