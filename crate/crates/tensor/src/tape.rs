//! Dynamic tape: every forward pass records its operations, `backward`
//! replays them in reverse.

use crate::gemm::bmm;
use crate::tensor::{numel, Tensor};
use crate::{Result, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Gelu(Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Option<Var>,
        bias: Option<Var>,
        normed: Vec<f64>,
        rstd: Vec<f64>,
    },
    Reshape(Var),
    Permute {
        x: Var,
        axes: Vec<usize>,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    Rotary {
        x: Var,
        cos: Tensor,
        sin: Tensor,
    },
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Records a forward computation for one reverse-mode sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Elementwise combination where either side may be a rank-0 scalar.
fn broadcast_zip(a: &Tensor, b: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    if b.rank() == 0 {
        let s = b.data()[0];
        return Ok(a.map(|x| f(x, s)));
    }
    if a.rank() == 0 {
        let s = a.data()[0];
        return Ok(b.map(|x| f(s, x)));
    }
    Err(shape_err(op, a, b))
}

/// Reduces a gradient to `shape`, summing when the operand was a broadcast scalar.
fn reduce_to(grad: Tensor, shape: &[usize]) -> Tensor {
    if grad.shape() == shape {
        grad
    } else {
        Tensor::scalar(grad.sum())
    }
}

fn rotate(x: &Tensor, cos: &Tensor, sin: &Tensor, inverse: bool) -> Tensor {
    let d = x.shape()[x.rank() - 1];
    let half = d / 2;
    let table = cos.len();
    let sign = if inverse { -1.0 } else { 1.0 };
    let mut out = x.data().to_vec();
    for (row, chunk) in out.chunks_mut(d).enumerate() {
        let t = (row * half) % table;
        for i in 0..half {
            let (c, s) = (cos.data()[t + i], sign * sin.data()[t + i]);
            let (x0, x1) = (chunk[2 * i], chunk[2 * i + 1]);
            chunk[2 * i] = x0 * c - x1 * s;
            chunk[2 * i + 1] = x0 * s + x1 * c;
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a value that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Batched matrix product over identical leading extents.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `a · bᵀ` on the last two axes without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, true)
    }

    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let value = bmm(self.value(a), ta, self.value(b), tb)?;
        self.push("matmul", value, Op::MatMul { a, b, ta, tb }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = broadcast_zip(self.value(a), self.value(b), "add", |x, y| x + y)?;
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = broadcast_zip(self.value(a), self.value(b), "sub", |x, y| x - y)?;
        self.push("sub", value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = broadcast_zip(self.value(a), self.value(b), "mul", |x, y| x * y)?;
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x * factor);
        self.push("scale", value, Op::Scale(a, factor), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x + offset);
        self.push("add_scalar", value, Op::AddScalar(a), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(gelu);
        self.push("gelu", value, Op::Gelu(a), &[a])
    }

    /// Adds a vector along the last axis of `x` (bias of a linear layer).
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let n = bv.len();
        if bv.rank() != 1 || xv.rank() == 0 || xv.shape()[xv.rank() - 1] != n {
            return Err(shape_err("add_bias", xv, bv));
        }
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(n) {
            for (d, b) in row.iter_mut().zip(bv.data()) {
                *d += b;
            }
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push("add_bias", value, Op::AddBias { x, bias }, &[x, bias])
    }

    /// Softmax over the last axis, stabilized by subtracting the row maximum.
    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let n = *xv.shape().last().ok_or_else(|| shape_err("softmax", xv, xv))?;
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), data);
        self.push("softmax", value, Op::Softmax(x), &[x])
    }

    /// Normalizes each row of the last axis to zero mean and unit variance
    /// (epsilon 1e-5), then applies the optional affine gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Option<Var>, bias: Option<Var>) -> Result<Var> {
        let xv = self.value(x);
        let n = *xv.shape().last().ok_or_else(|| shape_err("layer_norm", xv, xv))?;
        for p in [gain, bias].into_iter().flatten() {
            let pv = self.value(p);
            if pv.shape() != [n] {
                return Err(shape_err("layer_norm", xv, pv));
            }
        }
        let rows = xv.len() / n;
        let mut normed = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(rows);
        for row in xv.data().chunks(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + LN_EPS).sqrt();
            rstd.push(r);
            normed.extend(row.iter().map(|v| (v - mean) * r));
        }
        let mut out = normed.clone();
        if let Some(g) = gain {
            let g = self.value(g).data();
            for row in out.chunks_mut(n) {
                row.iter_mut().zip(g).for_each(|(o, g)| *o *= g);
            }
        }
        if let Some(b) = bias {
            let b = self.value(b).data();
            for row in out.chunks_mut(n) {
                row.iter_mut().zip(b).for_each(|(o, b)| *o += b);
            }
        }
        let value = Tensor::from_parts(xv.shape().to_vec(), out);
        let inputs: Vec<Var> = [Some(x), gain, bias].into_iter().flatten().collect();
        self.push(
            "layer_norm",
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                rstd,
            },
            &inputs,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let value = self.value(x).permute(axes)?;
        self.push("permute", value, Op::Permute { x, axes: axes.to_vec() }, &[x])
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, x: Var, a0: usize, a1: usize) -> Result<Var> {
        let rank = self.value(x).rank();
        if a0 >= rank || a1 >= rank {
            return Err(TensorError::OutOfRange {
                op: "transpose",
                detail: format!("axes ({a0}, {a1}) for rank {rank}"),
            });
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(a0, a1);
        self.permute(x, &axes)
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let value = self.value(x).slice_axis(axis, start, len)?;
        self.push("slice", value, Op::Slice { x, axis, start }, &[x])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat(&values, axis)?;
        self.push(
            "concat",
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        )
    }

    /// Selects rows of a rank-2 tensor; repeated indices are allowed.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(shape_err("gather_rows", xv, xv));
        }
        let (rows, n) = (xv.shape()[0], xv.shape()[1]);
        if idx.is_empty() {
            return Err(TensorError::OutOfRange {
                op: "gather_rows",
                detail: "empty index list".into(),
            });
        }
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= rows {
                return Err(TensorError::OutOfRange {
                    op: "gather_rows",
                    detail: format!("row {i} of {rows}"),
                });
            }
            data.extend_from_slice(&xv.data()[i * n..(i + 1) * n]);
        }
        let value = Tensor::from_parts(vec![idx.len(), n], data);
        self.push("gather_rows", value, Op::GatherRows { x, idx: idx.to_vec() }, &[x])
    }

    /// Rotates consecutive pairs `(2i, 2i+1)` of the last axis by per-row angles.
    ///
    /// `x` has shape `[..., T, D]`; `cos` and `sin` have shape `[T, D/2]` and are
    /// shared across the leading axes.
    pub fn rotary(&mut self, x: Var, cos: &Tensor, sin: &Tensor) -> Result<Var> {
        let xv = self.value(x);
        let r = xv.rank();
        if r < 2 || !xv.shape()[r - 1].is_multiple_of(2) {
            return Err(shape_err("rotary", xv, cos));
        }
        let want = [xv.shape()[r - 2], xv.shape()[r - 1] / 2];
        if cos.shape() != want || sin.shape() != want {
            return Err(shape_err("rotary", xv, cos));
        }
        let value = rotate(xv, cos, sin, false);
        self.push(
            "rotary",
            value,
            Op::Rotary {
                x,
                cos: cos.clone(),
                sin: sin.clone(),
            },
            &[x],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push("sum", value, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let value = Tensor::scalar(xv.sum() / xv.len() as f64);
        self.push("mean", value, Op::Mean(x), &[x])
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(shape_err("backward", lv, lv));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![1.0]));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, g, &mut grads)?;
        }
        Ok(Grads { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let da = if *ta {
                        bmm(bv, *tb, &g, true)?
                    } else {
                        bmm(&g, false, bv, !tb)?
                    };
                    self.accumulate(grads, *a, da);
                }
                if self.requires_grad(*b) {
                    let db = if *tb {
                        bmm(&g, true, av, *ta)?
                    } else {
                        bmm(av, !ta, &g, false)?
                    };
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                let sb = self.value(*b).shape().to_vec();
                self.accumulate(grads, *b, reduce_to(g.clone(), &sb));
                let sa = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, reduce_to(g, &sa));
            }
            Op::Sub(a, b) => {
                let sb = self.value(*b).shape().to_vec();
                self.accumulate(grads, *b, reduce_to(g.map(|x| -x), &sb));
                let sa = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, reduce_to(g, &sa));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let da = broadcast_zip(&g, bv, "mul", |x, y| x * y)?;
                    self.accumulate(grads, *a, reduce_to(da, av.shape()));
                }
                if self.requires_grad(*b) {
                    let db = broadcast_zip(&g, av, "mul", |x, y| x * y)?;
                    self.accumulate(grads, *b, reduce_to(db, bv.shape()));
                }
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, g.map(|x| x * f)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g),
            Op::Gelu(a) => {
                let da = g.zip_map(self.value(*a), |gy, x| gy * gelu_grad(x))?;
                self.accumulate(grads, *a, da);
            }
            Op::AddBias { x, bias } => {
                if self.requires_grad(*bias) {
                    let n = self.value(*bias).len();
                    let mut db = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                    }
                    self.accumulate(grads, *bias, Tensor::from_parts(vec![n], db));
                }
                self.accumulate(grads, *x, g);
            }
            Op::Softmax(x) => {
                let y = &node.value;
                let n = y.shape()[y.rank() - 1];
                let mut dx = vec![0.0; y.len()];
                for ((dxr, yr), gr) in dx.chunks_mut(n).zip(y.data().chunks(n)).zip(g.data().chunks(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dxr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *x, Tensor::from_parts(y.shape().to_vec(), dx));
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                rstd,
            } => {
                let shape = node.value.shape().to_vec();
                let n = shape[shape.len() - 1];
                if let Some(b) = bias {
                    let mut db = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                    }
                    self.accumulate(grads, *b, Tensor::from_parts(vec![n], db));
                }
                if let Some(gn) = gain {
                    let mut dg = vec![0.0; n];
                    for (row, nr) in g.data().chunks(n).zip(normed.chunks(n)) {
                        for j in 0..n {
                            dg[j] += row[j] * nr[j];
                        }
                    }
                    self.accumulate(grads, *gn, Tensor::from_parts(vec![n], dg));
                }
                if self.requires_grad(*x) {
                    let gain_v = gain.map(|gn| self.value(gn).data());
                    let mut dx = vec![0.0; g.len()];
                    for (r, ((dxr, gr), nr)) in dx
                        .chunks_mut(n)
                        .zip(g.data().chunks(n))
                        .zip(normed.chunks(n))
                        .enumerate()
                    {
                        let dn: Vec<f64> = match gain_v {
                            Some(gv) => gr.iter().zip(gv).map(|(a, b)| a * b).collect(),
                            None => gr.to_vec(),
                        };
                        let mean_dn = dn.iter().sum::<f64>() / n as f64;
                        let mean_dn_n = dn.iter().zip(nr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            dxr[j] = rstd[r] * (dn[j] - mean_dn - nr[j] * mean_dn_n);
                        }
                    }
                    self.accumulate(grads, *x, Tensor::from_parts(shape, dx));
                }
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, g.into_reshape(shape)?);
            }
            Op::Permute { x, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                self.accumulate(grads, *x, g.permute(&inverse)?);
            }
            Op::Slice { x, axis, start } => {
                let xs = self.value(*x).shape().to_vec();
                let inner: usize = xs[axis + 1..].iter().product();
                let outer: usize = xs[..*axis].iter().product();
                let (extent, len) = (xs[*axis], g.shape()[*axis]);
                if !self.requires_grad(*x) {
                    return Ok(());
                }
                // Add straight into the parent's buffer: sibling slices of one
                // tensor then share a single zeroed allocation.
                let dx = grads[x.0].get_or_insert_with(|| Tensor::from_parts(xs.clone(), vec![0.0; numel(&xs)]));
                let dx = dx.data_mut();
                for o in 0..outer {
                    let dst = (o * extent + start) * inner;
                    let src = o * len * inner;
                    for (d, s) in dx[dst..dst + len * inner]
                        .iter_mut()
                        .zip(&g.data()[src..src + len * inner])
                    {
                        *d += s;
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let mut start = 0;
                for p in parts {
                    let len = self.value(*p).shape()[*axis];
                    if self.requires_grad(*p) {
                        self.accumulate(grads, *p, g.slice_axis(*axis, start, len)?);
                    }
                    start += len;
                }
            }
            Op::GatherRows { x, idx } => {
                let xs = self.value(*x).shape().to_vec();
                let n = xs[1];
                let mut dx = vec![0.0; numel(&xs)];
                for (row, &i) in g.data().chunks(n).zip(idx) {
                    dx[i * n..(i + 1) * n].iter_mut().zip(row).for_each(|(d, r)| *d += r);
                }
                self.accumulate(grads, *x, Tensor::from_parts(xs, dx));
            }
            Op::Rotary { x, cos, sin } => {
                self.accumulate(grads, *x, rotate(&g, cos, sin, true));
            }
            Op::Sum(x) => {
                let xs = self.value(*x).shape().to_vec();
                let s = g.data()[0];
                self.accumulate(grads, *x, Tensor::from_parts(xs.clone(), vec![s; numel(&xs)]));
            }
            Op::Mean(x) => {
                let xs = self.value(*x).shape().to_vec();
                let n = numel(&xs);
                let s = g.data()[0] / n as f64;
                self.accumulate(grads, *x, Tensor::from_parts(xs, vec![s; n]));
            }
        }
        Ok(())
    }
}
