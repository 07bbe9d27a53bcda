//! Tensor-level reverse-mode differentiation.
//!
//! A [`Tape`] records every forward operation as a node holding its output
//! value. [`Tape::backward`] walks the nodes in reverse and returns the
//! gradient of a scalar loss with respect to every node that requires one.
//! Every forward op checks its output for NaN/Inf and fails with
//! [`Error::NonFinite`] instead of propagating garbage.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{gemm_acc, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-vertex neighbor lists shared by graph aggregation nodes.
pub type Adjacency = Arc<Vec<Vec<usize>>>;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Conv1d {
        x: Var,
        k: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    MeanLast(Var),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    RepeatRows(Var, usize),
    TileRows(Var, usize),
    GraphAgg {
        h: Var,
        eps: Var,
        adj: Adjacency,
    },
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize),
    Reshape(Var),
    Sum(Var),
    SumAbs(Var),
    SumSq(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn rows_cols(t: &Tensor) -> (usize, usize) {
    t.as_matrix_dims()
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn conv_out_len(t: usize, kw: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = t + 2 * pad;
    if stride == 0 || padded < kw {
        None
    } else {
        Some((padded - kw) / stride + 1)
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = self.parents_require_grad(&op);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn parents_require_grad(&self, op: &Op) -> bool {
        let rg = |v: &Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf => false,
            Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                rg(a) || rg(b)
            }
            Op::Scale(a, _)
            | Op::LeakyRelu(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::MeanLast(a)
            | Op::RepeatRows(a, _)
            | Op::TileRows(a, _)
            | Op::SliceCols(a, _, _)
            | Op::SliceRows(a, _)
            | Op::Reshape(a)
            | Op::Sum(a)
            | Op::SumAbs(a)
            | Op::SumSq(a) => rg(a),
            Op::Conv1d { x, k, b, .. } => rg(x) || rg(k) || rg(b),
            Op::ConcatCols(vs) | Op::StackRows(vs) => vs.iter().any(rg),
            Op::GraphAgg { h, eps, .. } => rg(h) || rg(eps),
        }
    }

    /// Records an input value.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(Error::Shape(format!(
                "matmul: {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(
            m,
            k,
            n,
            av.data(),
            k as isize,
            1,
            bv.data(),
            n as isize,
            1,
            &mut out,
        );
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), "matmul")
    }

    /// Adds a bias vector to every row of `x` (broadcast over leading axes).
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let (_, cols) = rows_cols(xv);
        if bv.rank() != 1 || bv.len() != cols {
            return Err(Error::Shape(format!(
                "add_bias: {:?} + {:?}",
                xv.shape(),
                bv.shape()
            )));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(cols) {
            for (o, bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        self.push(out, Op::AddBias(x, b), "add_bias")
    }

    /// `x · w + b` for `x: B×I`, `w: I×O`, `b: O`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    fn zip_op(&mut self, a: Var, b: Var, name: &'static str, f: fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(name, av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push(out, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn map_op(&mut self, a: Var, name: &'static str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let av = self.value(a);
        let data = av.data().iter().map(|x| f(*x)).collect();
        let out = Tensor::new(av.shape().to_vec(), data)?;
        self.push(out, op, name)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map_op(a, "scale", |x| x * c, Op::Scale(a, c))
    }

    /// Elementwise `max(x, αx)` for `α ∈ (0, 1)`.
    pub fn leaky_relu(&mut self, a: Var, alpha: f64) -> Result<Var> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("leaky_relu slope {alpha} outside (0,1)")));
        }
        self.map_op(
            a,
            "leaky_relu",
            |x| x.max(alpha * x),
            Op::LeakyRelu(a, alpha),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map_op(a, "sigmoid", sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map_op(a, "tanh", f64::tanh, Op::Tanh(a))
    }

    /// Cross-correlation along the last (time) axis.
    ///
    /// `x` is `C_in×T` or `B×C_in×T`, `k` is `C_out×C_in×Kw`, `b` is `C_out`.
    /// `pad` zeros are added on both ends of the time axis. Output length is
    /// `⌊(T + 2·pad − Kw)/stride⌋ + 1`.
    pub fn conv1d(&mut self, x: Var, k: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xv, kv, bv) = (self.value(x), self.value(k), self.value(b));
        let (batch, c_in, t) = match xv.shape() {
            [c, t] => (1, *c, *t),
            [bb, c, t] => (*bb, *c, *t),
            s => return Err(Error::Shape(format!("conv1d input rank: {s:?}"))),
        };
        let (c_out, k_in, kw) = match kv.shape() {
            [o, i, w] => (*o, *i, *w),
            s => return Err(Error::Shape(format!("conv1d kernel rank: {s:?}"))),
        };
        if k_in != c_in || bv.shape() != [c_out] {
            return Err(Error::Shape(format!(
                "conv1d: input {:?}, kernel {:?}, bias {:?}",
                xv.shape(),
                kv.shape(),
                bv.shape()
            )));
        }
        let t_out = conv_out_len(t, kw, stride, pad).ok_or_else(|| {
            Error::Shape(format!(
                "conv1d: time length {t} (+2·{pad} padding) shorter than kernel {kw}"
            ))
        })?;
        let (xd, kd, bd) = (xv.data(), kv.data(), bv.data());
        let mut out = vec![0.0; batch * c_out * t_out];
        for bi in 0..batch {
            let xb = &xd[bi * c_in * t..(bi + 1) * c_in * t];
            for o in 0..c_out {
                let orow = &mut out[(bi * c_out + o) * t_out..(bi * c_out + o + 1) * t_out];
                for (j, slot) in orow.iter_mut().enumerate() {
                    let mut acc = bd[o];
                    let start = (j * stride) as isize - pad as isize;
                    for i in 0..c_in {
                        let krow = &kd[(o * c_in + i) * kw..(o * c_in + i + 1) * kw];
                        let xrow = &xb[i * t..(i + 1) * t];
                        for (w, kval) in krow.iter().enumerate() {
                            let ti = start + w as isize;
                            if ti >= 0 && (ti as usize) < t {
                                acc += kval * xrow[ti as usize];
                            }
                        }
                    }
                    *slot = acc;
                }
            }
        }
        let shape = if xv.rank() == 2 {
            vec![c_out, t_out]
        } else {
            vec![batch, c_out, t_out]
        };
        self.push(
            Tensor::new(shape, out)?,
            Op::Conv1d {
                x,
                k,
                b,
                stride,
                pad,
            },
            "conv1d",
        )
    }

    /// Mean over the last axis.
    pub fn mean_last(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (rows, cols) = rows_cols(av);
        let data: Vec<f64> = av
            .data()
            .chunks(cols)
            .map(|r| r.iter().sum::<f64>() / cols as f64)
            .collect();
        let mut shape = av.shape()[..av.rank().saturating_sub(1)].to_vec();
        if shape.is_empty() {
            shape.push(rows);
        }
        self.push(Tensor::new(shape, data)?, Op::MeanLast(a), "mean_last")
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let dims: Vec<(usize, usize)> = parts
            .iter()
            .map(|v| {
                let t = self.value(*v);
                if t.rank() == 2 {
                    Ok((t.shape()[0], t.shape()[1]))
                } else {
                    Err(Error::Shape(format!("concat_cols needs matrices, got {:?}", t.shape())))
                }
            })
            .collect::<Result<_>>()?;
        let rows = dims.first().map_or(0, |d| d.0);
        if dims.iter().any(|d| d.0 != rows) {
            return Err(Error::Shape(format!("concat_cols row counts: {dims:?}")));
        }
        let total: usize = dims.iter().map(|d| d.1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (v, (_, c)) in parts.iter().zip(&dims) {
                out.extend_from_slice(&self.value(*v).data()[r * c..(r + 1) * c]);
            }
        }
        self.push(
            Tensor::new(vec![rows, total], out)?,
            Op::ConcatCols(parts.to_vec()),
            "concat_cols",
        )
    }

    /// Vertical stacking; each part contributes its matrix rows (a vector is one row).
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|v| rows_cols(self.value(*v)).1)
            .ok_or_else(|| Error::Shape("stack_rows of nothing".into()))?;
        let mut out = Vec::new();
        let mut rows = 0;
        for v in parts {
            let t = self.value(*v);
            let (r, c) = rows_cols(t);
            if c != cols {
                return Err(Error::Shape(format!("stack_rows widths {c} vs {cols}")));
            }
            rows += r;
            out.extend_from_slice(t.data());
        }
        self.push(
            Tensor::new(vec![rows, cols], out)?,
            Op::StackRows(parts.to_vec()),
            "stack_rows",
        )
    }

    /// Repeats each row of `x` `n` times consecutively: `B×C → (B·n)×C`.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = rows_cols(xv);
        let mut out = Vec::with_capacity(rows * n * cols);
        for r in xv.data().chunks(cols) {
            for _ in 0..n {
                out.extend_from_slice(r);
            }
        }
        self.push(
            Tensor::new(vec![rows * n, cols], out)?,
            Op::RepeatRows(x, n),
            "repeat_rows",
        )
    }

    /// Tiles the whole matrix `b` times vertically: `N×C → (b·N)×C`.
    pub fn tile_rows(&mut self, x: Var, b: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = rows_cols(xv);
        let mut out = Vec::with_capacity(rows * b * cols);
        for _ in 0..b {
            out.extend_from_slice(xv.data());
        }
        self.push(
            Tensor::new(vec![rows * b, cols], out)?,
            Op::TileRows(x, b),
            "tile_rows",
        )
    }

    /// Sum aggregation over a graph: `a_v = (1+ε)·h_v + Σ_{u∈adj(v)} h_u`.
    ///
    /// `h` may stack several graphs of the same topology (`(B·N)×H`). The
    /// neighbor rows are summed in lexicographic row order, so the result
    /// depends only on the neighbor set and not on vertex numbering.
    pub fn graph_aggregate(&mut self, h: Var, eps: Var, adj: &Adjacency) -> Result<Var> {
        let (hv, ev) = (self.value(h), self.value(eps));
        let n = adj.len();
        let (rows, width) = rows_cols(hv);
        if hv.rank() != 2 || n == 0 || rows % n != 0 {
            return Err(Error::Shape(format!(
                "graph_aggregate: features {:?} for {n} vertices",
                hv.shape()
            )));
        }
        if ev.len() != 1 {
            return Err(Error::Shape(format!("graph_aggregate: ε shape {:?}", ev.shape())));
        }
        if let Some(&index) = adj.iter().flatten().find(|&&u| u >= n) {
            return Err(Error::AdjacencyRange { index, n });
        }
        let self_w = 1.0 + ev.data()[0];
        let hd = hv.data();
        let mut out = vec![0.0; rows * width];
        let mut order: Vec<usize> = Vec::with_capacity(16);
        for blk in 0..rows / n {
            let base = blk * n;
            let row_of = |u: usize| &hd[(base + u) * width..(base + u + 1) * width];
            for (v, nbrs) in adj.iter().enumerate() {
                order.clear();
                order.extend_from_slice(nbrs);
                order.sort_unstable_by(|&a, &b| lex_cmp(row_of(a), row_of(b)));
                let dst = &mut out[(base + v) * width..(base + v + 1) * width];
                for &u in &order {
                    add_into(dst, row_of(u));
                }
                for (o, x) in dst.iter_mut().zip(row_of(v)) {
                    *o += self_w * x;
                }
            }
        }
        self.push(
            Tensor::new(vec![rows, width], out)?,
            Op::GraphAgg {
                h,
                eps,
                adj: adj.clone(),
            },
            "graph_aggregate",
        )
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || start > end || end > xv.shape()[1] {
            return Err(Error::Shape(format!(
                "slice_cols {start}..{end} of {:?}",
                xv.shape()
            )));
        }
        let (rows, cols) = (xv.shape()[0], xv.shape()[1]);
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&xv.data()[r * cols + start..r * cols + end]);
        }
        self.push(
            Tensor::new(vec![rows, end - start], out)?,
            Op::SliceCols(x, start, end),
            "slice_cols",
        )
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = rows_cols(xv);
        if start > end || end > rows {
            return Err(Error::Shape(format!(
                "slice_rows {start}..{end} of {:?}",
                xv.shape()
            )));
        }
        let out = xv.data()[start * cols..end * cols].to_vec();
        self.push(
            Tensor::new(vec![end - start, cols], out)?,
            Op::SliceRows(x, start),
            "slice_rows",
        )
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        self.push(out, Op::Reshape(x), "reshape")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), "sum")
    }

    pub fn sum_abs(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().map(|v| v.abs()).sum();
        self.push(Tensor::scalar(s), Op::SumAbs(x), "sum_abs")
    }

    pub fn sum_sq(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        self.push(Tensor::scalar(s), Op::SumSq(x), "sum_sq")
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// requires one.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Grads { grads });
        }
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Grads { grads })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                self.accumulate(grads, *a, |ga| {
                    // ga += g · bᵀ
                    gemm_acc(m, n, k, gd, n as isize, 1, bv.data(), 1, n as isize, ga);
                });
                self.accumulate(grads, *b, |gb| {
                    // gb += aᵀ · g
                    gemm_acc(k, m, n, av.data(), 1, k as isize, gd, n as isize, 1, gb);
                });
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, |gx| add_into(gx, gd));
                let cols = self.value(*b).len();
                self.accumulate(grads, *b, |gb| {
                    for row in gd.chunks(cols) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, gd));
                self.accumulate(grads, *b, |gb| add_into(gb, gd));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| add_into(ga, gd));
                self.accumulate(grads, *b, |gb| {
                    for (o, v) in gb.iter_mut().zip(gd) {
                        *o -= v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |ga| {
                    for ((o, gg), y) in ga.iter_mut().zip(gd).zip(bv) {
                        *o += gg * y;
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for ((o, gg), x) in gb.iter_mut().zip(gd).zip(av) {
                        *o += gg * x;
                    }
                });
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, |ga| {
                    for (o, gg) in ga.iter_mut().zip(gd) {
                        *o += gg * c;
                    }
                });
            }
            Op::LeakyRelu(a, alpha) => {
                let av = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for ((o, gg), x) in ga.iter_mut().zip(gd).zip(av) {
                        *o += gg * if *x > 0.0 { 1.0 } else { *alpha };
                    }
                });
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, |ga| {
                    for ((o, gg), y) in ga.iter_mut().zip(gd).zip(out) {
                        *o += gg * y * (1.0 - y);
                    }
                });
            }
            Op::Tanh(a) => {
                self.accumulate(grads, *a, |ga| {
                    for ((o, gg), y) in ga.iter_mut().zip(gd).zip(out) {
                        *o += gg * (1.0 - y * y);
                    }
                });
            }
            Op::Conv1d {
                x,
                k,
                b,
                stride,
                pad,
            } => self.backprop_conv(*x, *k, *b, *stride, *pad, node.value.shape(), gd, grads),
            Op::MeanLast(a) => {
                let (_, cols) = rows_cols(self.value(*a));
                let inv = 1.0 / cols as f64;
                self.accumulate(grads, *a, |ga| {
                    for (row, gg) in ga.chunks_mut(cols).zip(gd) {
                        row.iter_mut().for_each(|o| *o += gg * inv);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.shape()[1];
                let rows = node.value.shape()[0];
                let mut offset = 0;
                for p in parts {
                    let c = self.value(*p).shape()[1];
                    self.accumulate(grads, *p, |gp| {
                        for r in 0..rows {
                            add_into(
                                &mut gp[r * c..(r + 1) * c],
                                &gd[r * total + offset..r * total + offset + c],
                            );
                        }
                    });
                    offset += c;
                }
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    self.accumulate(grads, *p, |gp| add_into(gp, &gd[offset..offset + len]));
                    offset += len;
                }
            }
            Op::RepeatRows(x, n) => {
                let (_, cols) = rows_cols(self.value(*x));
                self.accumulate(grads, *x, |gx| {
                    for (r, row) in gx.chunks_mut(cols).enumerate() {
                        for j in 0..*n {
                            let src = (r * n + j) * cols;
                            add_into(row, &gd[src..src + cols]);
                        }
                    }
                });
            }
            Op::TileRows(x, b) => {
                let len = self.value(*x).len();
                self.accumulate(grads, *x, |gx| {
                    for blk in 0..*b {
                        add_into(gx, &gd[blk * len..(blk + 1) * len]);
                    }
                });
            }
            Op::GraphAgg { h, eps, adj } => {
                let hv = self.value(*h);
                let (rows, width) = rows_cols(hv);
                let n = adj.len();
                let self_w = 1.0 + self.value(*eps).data()[0];
                self.accumulate(grads, *h, |gh| {
                    for (o, gg) in gh.iter_mut().zip(gd) {
                        *o += self_w * gg;
                    }
                    for blk in 0..rows / n {
                        let base = blk * n;
                        for (v, nbrs) in adj.iter().enumerate() {
                            let src = (base + v) * width;
                            for &u in nbrs {
                                let dst = (base + u) * width;
                                for c in 0..width {
                                    gh[dst + c] += gd[src + c];
                                }
                            }
                        }
                    }
                });
                self.accumulate(grads, *eps, |ge| {
                    ge[0] += hv.data().iter().zip(gd).map(|(x, gg)| x * gg).sum::<f64>();
                });
            }
            Op::SliceCols(x, start, end) => {
                let cols = self.value(*x).shape()[1];
                let w = end - start;
                self.accumulate(grads, *x, |gx| {
                    for (r, grow) in gd.chunks(w).enumerate() {
                        add_into(&mut gx[r * cols + start..r * cols + end], grow);
                    }
                });
            }
            Op::SliceRows(x, start) => {
                let (_, cols) = rows_cols(self.value(*x));
                self.accumulate(grads, *x, |gx| {
                    add_into(&mut gx[start * cols..start * cols + gd.len()], gd);
                });
            }
            Op::Reshape(x) => self.accumulate(grads, *x, |gx| add_into(gx, gd)),
            Op::Sum(x) => self.accumulate(grads, *x, |gx| gx.iter_mut().for_each(|o| *o += gd[0])),
            Op::SumAbs(x) => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |gx| {
                    for (o, v) in gx.iter_mut().zip(xv) {
                        *o += gd[0] * sign(*v);
                    }
                });
            }
            Op::SumSq(x) => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, |gx| {
                    for (o, v) in gx.iter_mut().zip(xv) {
                        *o += 2.0 * gd[0] * v;
                    }
                });
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_conv(
        &self,
        x: Var,
        k: Var,
        b: Var,
        stride: usize,
        pad: usize,
        out_shape: &[usize],
        gd: &[f64],
        grads: &mut [Option<Tensor>],
    ) {
        let (xv, kv) = (self.value(x), self.value(k));
        let (batch, c_in, t) = match xv.shape() {
            [c, t] => (1, *c, *t),
            [bb, c, t] => (*bb, *c, *t),
            _ => unreachable!("validated in forward"),
        };
        let (c_out, kw) = (kv.shape()[0], kv.shape()[2]);
        let t_out = *out_shape.last().expect("conv output has a time axis");
        let (xd, kd) = (xv.data(), kv.data());
        self.accumulate(grads, b, |gb| {
            for bi in 0..batch {
                for (o, slot) in gb.iter_mut().enumerate() {
                    let base = (bi * c_out + o) * t_out;
                    *slot += gd[base..base + t_out].iter().sum::<f64>();
                }
            }
        });
        self.accumulate(grads, k, |gk| {
            for bi in 0..batch {
                for o in 0..c_out {
                    let grow = &gd[(bi * c_out + o) * t_out..(bi * c_out + o + 1) * t_out];
                    for i in 0..c_in {
                        let xrow = &xd[(bi * c_in + i) * t..(bi * c_in + i + 1) * t];
                        let krow = &mut gk[(o * c_in + i) * kw..(o * c_in + i + 1) * kw];
                        for (j, gg) in grow.iter().enumerate() {
                            let start = (j * stride) as isize - pad as isize;
                            for (w, slot) in krow.iter_mut().enumerate() {
                                let ti = start + w as isize;
                                if ti >= 0 && (ti as usize) < t {
                                    *slot += gg * xrow[ti as usize];
                                }
                            }
                        }
                    }
                }
            }
        });
        self.accumulate(grads, x, |gx| {
            for bi in 0..batch {
                for o in 0..c_out {
                    let grow = &gd[(bi * c_out + o) * t_out..(bi * c_out + o + 1) * t_out];
                    for i in 0..c_in {
                        let krow = &kd[(o * c_in + i) * kw..(o * c_in + i + 1) * kw];
                        let xrow = &mut gx[(bi * c_in + i) * t..(bi * c_in + i + 1) * t];
                        for (j, gg) in grow.iter().enumerate() {
                            let start = (j * stride) as isize - pad as isize;
                            for (w, kval) in krow.iter().enumerate() {
                                let ti = start + w as isize;
                                if ti >= 0 && (ti as usize) < t {
                                    xrow[ti as usize] += gg * kval;
                                }
                            }
                        }
                    }
                }
            }
        });
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| Tensor::zeros(node.value.shape()));
        f(slot.data_mut());
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn dense_identity_and_hand_case() {
        let mut tape = Tape::new();
        let x = tape.constant(mat(&[vec![1.0, 2.0]])).unwrap();
        let eye = tape.constant(mat(&[vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap();
        let zero = tape.constant(Tensor::zeros(&[2])).unwrap();
        let y = tape.dense(x, eye, zero).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);

        let w = tape.constant(mat(&[vec![1.0], vec![1.0]])).unwrap();
        let b = tape.constant(Tensor::vector(vec![3.0])).unwrap();
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[6.0]);
    }

    #[test]
    fn dense_shape_mismatch_is_error() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let w = tape.constant(Tensor::zeros(&[2, 2])).unwrap();
        assert!(matches!(tape.matmul(x, w), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_box_sum_and_full_width() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(&[1, 7], 1.0)).unwrap();
        let k = tape.constant(Tensor::filled(&[1, 1, 3], 1.0)).unwrap();
        let b = tape.constant(Tensor::zeros(&[1])).unwrap();
        let y = tape.conv1d(x, k, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 5]);
        assert!(tape.value(y).data().iter().all(|v| *v == 3.0));

        let k7 = tape.constant(Tensor::filled(&[1, 1, 7], 1.0)).unwrap();
        let y = tape.conv1d(x, k7, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1]);

        let k8 = tape.constant(Tensor::filled(&[1, 1, 8], 1.0)).unwrap();
        assert!(tape.conv1d(x, k8, b, 1, 0).is_err());
    }

    #[test]
    fn leaky_relu_branches() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![2.0, -1.0, 0.0]), true).unwrap();
        let y = tape.leaky_relu(x, 0.2).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0, -0.2, 0.0]);
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.2, 0.2]);
    }

    #[test]
    fn backward_linear_and_quadratic() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 3.5]), true).unwrap();
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, -4.0, 7.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]), true).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn non_finite_forward_trips() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1e200]), true).unwrap();
        let y = tape.mul(x, x);
        assert!(matches!(y, Err(Error::NonFinite { op: "mul" })));
        assert!(tape.leaf(Tensor::vector(vec![f64::NAN]), false).is_err());
    }

    #[test]
    fn graph_aggregate_triangle_and_isolated() {
        let adj: Adjacency = Arc::new(vec![vec![1, 2], vec![0, 2], vec![0, 1], vec![]]);
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::filled(&[4, 2], 1.0)).unwrap();
        let eps = tape.constant(Tensor::scalar(0.0)).unwrap();
        let a = tape.graph_aggregate(h, eps, &adj).unwrap();
        assert_eq!(tape.value(a).data(), &[3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 1.0, 1.0]);
    }

    #[test]
    fn graph_aggregate_rejects_bad_adjacency() {
        let adj: Adjacency = Arc::new(vec![vec![5], vec![0]]);
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::zeros(&[2, 1])).unwrap();
        let eps = tape.constant(Tensor::scalar(0.0)).unwrap();
        assert!(matches!(
            tape.graph_aggregate(h, eps, &adj),
            Err(Error::AdjacencyRange { index: 5, n: 2 })
        ));
    }
}
