//! Tape-style reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every op applied to its [`Var`]s in execution order, so
//! the node list is already topologically sorted. [`Graph::backward`] walks it
//! once in reverse. The tape is meant to be rebuilt for every training step.

use crate::error::ComputeError;
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(Binary, Var, Var),
    Affine(Var, f32),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Abs(Var),
    Clamp(Var, f32, f32),
    Sum(Var),
    Mean(Var),
    Variance(Var),
    RowSum(Var),
    LayerNormRows(Var),
    LogSoftmaxRows(Var),
    Reshape(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Per-op cache, e.g. inverse standard deviations for layer norm.
    saved: Vec<f32>,
}

/// Recorded computation for one forward/backward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], keyed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient w.r.t. `var`; zeros when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }
}

fn finite(op: &'static str, t: Tensor) -> Result<Tensor, ComputeError> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(ComputeError::NonFinite { op })
    }
}

/// Broadcast geometry of a binary op over (rows, cols) views.
struct Bcast {
    rows: usize,
    cols: usize,
    a: (usize, usize),
    b: (usize, usize),
}

impl Bcast {
    fn new(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(Self, Vec<usize>), ComputeError> {
        let err = || ComputeError::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        };
        let (ar, ac, br, bc) = (a.rows(), a.cols(), b.rows(), b.cols());
        let shape = if a.shape() == b.shape() {
            a.shape().to_vec()
        } else if b.numel() == 1 {
            a.shape().to_vec()
        } else if a.numel() == 1 {
            b.shape().to_vec()
        } else {
            let dim = |x: usize, y: usize| {
                if x == y || y == 1 {
                    Some(x)
                } else if x == 1 {
                    Some(y)
                } else {
                    None
                }
            };
            let r = dim(ar, br).ok_or_else(err)?;
            let c = dim(ac, bc).ok_or_else(err)?;
            vec![r, c]
        };
        let rows = if shape.len() == 2 { shape[0] } else { 1 };
        let cols: usize = if shape.len() == 2 {
            shape[1]
        } else {
            shape.iter().product()
        };
        let (ar, ac) = if a.numel() == 1 { (1, 1) } else { (ar, ac) };
        let (br, bc) = if b.numel() == 1 { (1, 1) } else { (br, bc) };
        Ok((
            Self {
                rows,
                cols,
                a: (ar, ac),
                b: (br, bc),
            },
            shape,
        ))
    }

    #[inline]
    fn idx(dims: (usize, usize), i: usize, j: usize) -> usize {
        let r = if dims.0 == 1 { 0 } else { i };
        let c = if dims.1 == 1 { 0 } else { j };
        r * dims.1 + c
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, saved: Vec<f32>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            saved,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf tracked for gradients.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true, Vec::new())
    }

    /// Leaf excluded from gradient tracking.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false, Vec::new())
    }

    fn unary(&mut self, x: Var, value: Tensor, op: Op, saved: Vec<f32>) -> Var {
        let rg = self.nodes[x.0].requires_grad;
        self.push(value, op, rg, saved)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(ComputeError::Shape {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let out = Tensor::new(&[m, n], matmul_nn(ta.data(), tb.data(), m, k, n))?;
        let out = finite("matmul", out)?;
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push(out, Op::MatMul(a, b), rg, Vec::new()))
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var, ComputeError> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (bc, shape) = Bcast::new(name, ta, tb)?;
        let (da, db) = (ta.data(), tb.data());
        let f = |x: f32, y: f32| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let data: Vec<f32> = if ta.shape() == tb.shape() {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut out = Vec::with_capacity(bc.rows * bc.cols);
            for i in 0..bc.rows {
                for j in 0..bc.cols {
                    out.push(f(da[Bcast::idx(bc.a, i, j)], db[Bcast::idx(bc.b, i, j)]));
                }
            }
            out
        };
        let out = finite(name, Tensor::new(&shape, data)?)?;
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push(out, Op::Binary(kind, a, b), rg, Vec::new()))
    }

    /// Elementwise sum; equal shapes, scalar, row or column broadcast.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        self.binary(Binary::Div, a, b)
    }

    /// `scale · x + shift` with constant scalars.
    pub fn affine(&mut self, x: Var, scale: f32, shift: f32) -> Result<Var, ComputeError> {
        let out = finite("affine", self.nodes[x.0].value.map(|v| scale * v + shift))?;
        Ok(self.unary(x, out, Op::Affine(x, scale), Vec::new()))
    }

    pub fn scale(&mut self, x: Var, s: f32) -> Result<Var, ComputeError> {
        self.affine(x, s, 0.0)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var, ComputeError> {
        self.affine(x, -1.0, 0.0)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, ComputeError> {
        let out = self.nodes[x.0].value.map(|v| v.max(0.0));
        Ok(self.unary(x, out, Op::Relu(x), Vec::new()))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, ComputeError> {
        let out = self.nodes[x.0].value.map(f32::tanh);
        Ok(self.unary(x, out, Op::Tanh(x), Vec::new()))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, ComputeError> {
        let out = finite("exp", self.nodes[x.0].value.map(f32::exp))?;
        Ok(self.unary(x, out, Op::Exp(x), Vec::new()))
    }

    pub fn log(&mut self, x: Var) -> Result<Var, ComputeError> {
        let t = &self.nodes[x.0].value;
        if let Some(bad) = t.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(ComputeError::Domain {
                op: "log",
                detail: format!("non-positive argument {bad}"),
            });
        }
        let out = finite("log", t.map(f32::ln))?;
        Ok(self.unary(x, out, Op::Log(x), Vec::new()))
    }

    pub fn square(&mut self, x: Var) -> Result<Var, ComputeError> {
        let out = finite("square", self.nodes[x.0].value.map(|v| v * v))?;
        Ok(self.unary(x, out, Op::Square(x), Vec::new()))
    }

    /// `|x|`; the subgradient at zero is zero.
    pub fn abs(&mut self, x: Var) -> Result<Var, ComputeError> {
        let out = self.nodes[x.0].value.map(f32::abs);
        Ok(self.unary(x, out, Op::Abs(x), Vec::new()))
    }

    pub fn clamp(&mut self, x: Var, lo: f32, hi: f32) -> Result<Var, ComputeError> {
        let out = self.nodes[x.0].value.map(|v| v.clamp(lo, hi));
        Ok(self.unary(x, out, Op::Clamp(x, lo, hi), Vec::new()))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, ComputeError> {
        let out = finite("sum", Tensor::scalar(self.nodes[x.0].value.sum()))?;
        Ok(self.unary(x, out, Op::Sum(x), Vec::new()))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, ComputeError> {
        let t = &self.nodes[x.0].value;
        let out = finite("mean", Tensor::scalar(t.sum() / t.numel() as f32))?;
        Ok(self.unary(x, out, Op::Mean(x), Vec::new()))
    }

    /// Population variance over all elements.
    pub fn var(&mut self, x: Var) -> Result<Var, ComputeError> {
        let t = &self.nodes[x.0].value;
        let n = t.numel() as f32;
        let m = t.sum() / n;
        let v = t.data().iter().map(|&x| (x - m) * (x - m)).sum::<f32>() / n;
        let out = finite("var", Tensor::scalar(v))?;
        Ok(self.unary(x, out, Op::Variance(x), vec![m]))
    }

    /// Sums each row of a matrix into a `[rows, 1]` column.
    pub fn row_sum(&mut self, x: Var) -> Result<Var, ComputeError> {
        let t = &self.nodes[x.0].value;
        let (r, c) = (t.rows(), t.cols());
        let data: Vec<f32> = (0..r).map(|i| t.data()[i * c..(i + 1) * c].iter().sum()).collect();
        let out = finite("row_sum", Tensor::new(&[r, 1], data)?)?;
        Ok(self.unary(x, out, Op::RowSum(x), Vec::new()))
    }

    /// Standardizes every row to zero mean and unit variance (no affine).
    pub fn layer_norm_rows(&mut self, x: Var, eps: f32) -> Result<Var, ComputeError> {
        let t = &self.nodes[x.0].value;
        let (r, c) = (t.rows(), t.cols());
        let mut out = vec![0.0f32; r * c];
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = &t.data()[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f32>() / c as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / c as f32;
            let s = 1.0 / (var + eps).sqrt();
            inv_std.push(s);
            for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = (v - mean) * s;
            }
        }
        let out = finite("layer_norm", Tensor::new(t.shape(), out)?)?;
        Ok(self.unary(x, out, Op::LayerNormRows(x), inv_std))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var, ComputeError> {
        let t = &self.nodes[x.0].value;
        let (r, c) = (t.rows(), t.cols());
        let mut out = vec![0.0f32; r * c];
        for i in 0..r {
            let row = &t.data()[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f32>().ln();
            for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = v - lse;
            }
        }
        let out = finite("log_softmax", Tensor::new(t.shape(), out)?)?;
        Ok(self.unary(x, out, Op::LogSoftmaxRows(x), Vec::new()))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, ComputeError> {
        let out = self.nodes[x.0].value.clone().reshape(shape)?;
        Ok(self.unary(x, out, Op::Reshape(x), Vec::new()))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, ComputeError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.rows() != tb.rows() {
            return Err(ComputeError::Shape {
                op: "concat_cols",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (r, ca, cb) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = Vec::with_capacity(r * (ca + cb));
        for i in 0..r {
            data.extend_from_slice(ta.row(i));
            data.extend_from_slice(tb.row(i));
        }
        let out = Tensor::new(&[r, ca + cb], data)?;
        let rg = self.nodes[a.0].requires_grad || self.nodes[b.0].requires_grad;
        Ok(self.push(out, Op::ConcatCols(a, b), rg, Vec::new()))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, ComputeError> {
        let t = &self.nodes[x.0].value;
        if start >= end || end > t.cols() {
            return Err(ComputeError::Shape {
                op: "slice_cols",
                lhs: t.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let r = t.rows();
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&t.row(i)[start..end]);
        }
        let out = Tensor::new(&[r, end - start], data)?;
        Ok(self.unary(x, out, Op::SliceCols(x, start), Vec::new()))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, ComputeError> {
        let lt = &self.nodes[loss.0].value;
        if lt.numel() != 1 {
            return Err(ComputeError::NotScalar {
                shape: lt.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn like(&self, v: Var, data: Vec<f32>) -> Tensor {
        Tensor::new(self.nodes[v.0].value.shape(), data).expect("gradient shape")
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), ComputeError> {
        let gd = g.data();
        let out = &node.value;
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.nodes[a.0].requires_grad {
                    let ga = matmul_nt(gd, tb.data(), m, n, k);
                    self.accumulate(grads, a, self.like(a, ga));
                }
                if self.nodes[b.0].requires_grad {
                    let gb = matmul_tn(ta.data(), gd, m, k, n);
                    self.accumulate(grads, b, self.like(b, gb));
                }
            }
            Op::Binary(kind, a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (bc, _) = Bcast::new("backward", ta, tb)?;
                let mut ga = vec![0.0f32; ta.numel()];
                let mut gb = vec![0.0f32; tb.numel()];
                let (da, db) = (ta.data(), tb.data());
                for i in 0..bc.rows {
                    for j in 0..bc.cols {
                        let o = i * bc.cols + j;
                        let (ia, ib) = (Bcast::idx(bc.a, i, j), Bcast::idx(bc.b, i, j));
                        let gv = gd[o];
                        match kind {
                            Binary::Add => {
                                ga[ia] += gv;
                                gb[ib] += gv;
                            }
                            Binary::Sub => {
                                ga[ia] += gv;
                                gb[ib] -= gv;
                            }
                            Binary::Mul => {
                                ga[ia] += gv * db[ib];
                                gb[ib] += gv * da[ia];
                            }
                            Binary::Div => {
                                ga[ia] += gv / db[ib];
                                gb[ib] -= gv * da[ia] / (db[ib] * db[ib]);
                            }
                        }
                    }
                }
                self.accumulate(grads, a, self.like(a, ga));
                self.accumulate(grads, b, self.like(b, gb));
            }
            Op::Affine(x, s) => {
                self.accumulate(grads, x, self.like(x, gd.iter().map(|v| v * s).collect()));
            }
            Op::Relu(x) => {
                let xs = self.nodes[x.0].value.data();
                let d = gd.iter().zip(xs).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect();
                self.accumulate(grads, x, self.like(x, d));
            }
            Op::Tanh(x) => {
                let d = gd.iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                self.accumulate(grads, x, self.like(x, d));
            }
            Op::Exp(x) => {
                let d = gd.iter().zip(out.data()).map(|(g, y)| g * y).collect();
                self.accumulate(grads, x, self.like(x, d));
            }
            Op::Log(x) => {
                let xs = self.nodes[x.0].value.data();
                let d = gd.iter().zip(xs).map(|(g, v)| g / v).collect();
                self.accumulate(grads, x, self.like(x, d));
            }
            Op::Square(x) => {
                let xs = self.nodes[x.0].value.data();
                let d = gd.iter().zip(xs).map(|(g, v)| 2.0 * g * v).collect();
                self.accumulate(grads, x, self.like(x, d));
            }
            Op::Abs(x) => {
                let xs = self.nodes[x.0].value.data();
                let sign = |v: f32| {
                    if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                };
                let d = gd.iter().zip(xs).map(|(g, &v)| g * sign(v)).collect();
                self.accumulate(grads, x, self.like(x, d));
            }
            Op::Clamp(x, lo, hi) => {
                let xs = self.nodes[x.0].value.data();
                let d = gd
                    .iter()
                    .zip(xs)
                    .map(|(g, &v)| if v > lo && v < hi { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, x, self.like(x, d));
            }
            Op::Sum(x) => {
                let n = self.nodes[x.0].value.numel();
                self.accumulate(grads, x, self.like(x, vec![gd[0]; n]));
            }
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.numel();
                self.accumulate(grads, x, self.like(x, vec![gd[0] / n as f32; n]));
            }
            Op::Variance(x) => {
                let xs = self.nodes[x.0].value.data();
                let n = xs.len() as f32;
                let m = node.saved[0];
                let d = xs.iter().map(|v| gd[0] * 2.0 * (v - m) / n).collect();
                self.accumulate(grads, x, self.like(x, d));
            }
            Op::RowSum(x) => {
                let t = &self.nodes[x.0].value;
                let (r, c) = (t.rows(), t.cols());
                let mut d = Vec::with_capacity(r * c);
                for &gi in gd.iter().take(r) {
                    d.extend(std::iter::repeat_n(gi, c));
                }
                self.accumulate(grads, x, self.like(x, d));
            }
            Op::LayerNormRows(x) => {
                let (r, c) = (out.rows(), out.cols());
                let y = out.data();
                let mut d = vec![0.0f32; r * c];
                for i in 0..r {
                    let gs = &gd[i * c..(i + 1) * c];
                    let ys = &y[i * c..(i + 1) * c];
                    let mg = gs.iter().sum::<f32>() / c as f32;
                    let mgy = gs.iter().zip(ys).map(|(a, b)| a * b).sum::<f32>() / c as f32;
                    let s = node.saved[i];
                    for j in 0..c {
                        d[i * c + j] = s * (gs[j] - mg - ys[j] * mgy);
                    }
                }
                self.accumulate(grads, x, self.like(x, d));
            }
            Op::LogSoftmaxRows(x) => {
                let (r, c) = (out.rows(), out.cols());
                let y = out.data();
                let mut d = vec![0.0f32; r * c];
                for i in 0..r {
                    let gs = &gd[i * c..(i + 1) * c];
                    let total: f32 = gs.iter().sum();
                    for j in 0..c {
                        d[i * c + j] = gs[j] - y[i * c + j].exp() * total;
                    }
                }
                self.accumulate(grads, x, self.like(x, d));
            }
            Op::Reshape(x) => {
                self.accumulate(grads, x, self.like(x, gd.to_vec()));
            }
            Op::ConcatCols(a, b) => {
                let ca = self.nodes[a.0].value.cols();
                let c = out.cols();
                let mut ga = Vec::with_capacity(out.rows() * ca);
                let mut gb = Vec::with_capacity(out.rows() * (c - ca));
                for i in 0..out.rows() {
                    ga.extend_from_slice(&gd[i * c..i * c + ca]);
                    gb.extend_from_slice(&gd[i * c + ca..(i + 1) * c]);
                }
                self.accumulate(grads, a, self.like(a, ga));
                self.accumulate(grads, b, self.like(b, gb));
            }
            Op::SliceCols(x, start) => {
                let t = &self.nodes[x.0].value;
                let (r, c) = (t.rows(), t.cols());
                let w = out.cols();
                let mut d = vec![0.0f32; r * c];
                for i in 0..r {
                    d[i * c + start..i * c + start + w].copy_from_slice(&gd[i * w..(i + 1) * w]);
                }
                self.accumulate(grads, x, self.like(x, d));
            }
        }
        Ok(())
    }
}
