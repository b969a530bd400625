//! Reverse-mode differentiation over a linear tape of tensor operations.
//!
//! Every forward op appends a node holding its output value and the ids of
//! its operands. `backward` walks the tape once in reverse, accumulating
//! adjoints. Only leaves (constants and bound parameters) keep their
//! adjoints after the sweep.

use std::collections::{BTreeMap, HashMap};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    MeanRows,
    Sum,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    ScaleBy { scalar: Var, x: Var },
    AddRow { x: Var, row: Var },
    Act(Var, Activation),
    SoftmaxRows(Var),
    MeanRows(Var),
    Sum(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    Transpose(Var),
    Cosine(Var, Var),
    Triplet { s: Var, margin: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Minimum norm accepted by [`Tape::cosine`].
pub const MIN_NORM: f64 = 1e-12;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<String, Var>,
    bound_order: Vec<(Var, String)>,
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// Sum that does not depend on the order of `terms`: sorted, then accumulated.
fn unordered_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

/// Like [`matmul_raw`], but each output sums its `k` products in sorted order.
fn matmul_unordered_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    let mut terms = vec![0.0; k];
    for i in 0..m {
        for j in 0..n {
            for (p, t) in terms.iter_mut().enumerate() {
                *t = a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = unordered_sum(&mut terms);
        }
    }
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn dims(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.value(v).shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::dim(op, format!("expected rank-2 operand, got {s:?}"))),
        }
    }

    /// Adds a leaf holding `t`. Leaves keep their adjoints after `backward`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t)
    }

    /// Binds parameter `name` from `store` as a leaf, once per tape.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = store.get(name)?.clone();
        let v = self.leaf(t);
        self.bound.insert(name.to_string(), v);
        self.bound_order.push((v, name.to_string()));
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a, "matmul")?;
        let (k2, n) = self.dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", format!("[{m}x{k}] * [{k2}x{n}]")));
        }
        let out = matmul_raw(self.value(a).values(), self.value(b).values(), m, k, n);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b)))
    }

    /// Matrix product whose inner dimension indexes an unordered set (regions,
    /// multiscale rows). Permuting that dimension in both operands leaves the
    /// result bit-identical.
    pub fn matmul_unordered(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a, "matmul")?;
        let (k2, n) = self.dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", format!("[{m}x{k}] * [{k2}x{n}]")));
        }
        let out = matmul_unordered_raw(self.value(a).values(), self.value(b).values(), m, k, n);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b)))
    }

    fn zip_same(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim(op, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let out = ta.values().iter().zip(tb.values()).map(|(x, y)| f(*x, *y)).collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let out = ta.values().iter().map(|x| x * c).collect();
        let t = Tensor::from_parts(ta.shape().to_vec(), out);
        self.push(t, Op::Scale(a, c))
    }

    /// `a + c` for a scalar constant `c`.
    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        let ta = self.value(a);
        let out = ta.values().iter().map(|x| x + c).collect();
        let t = Tensor::from_parts(ta.shape().to_vec(), out);
        self.push(t, Op::Shift(a))
    }

    /// Multiplies every entry of `x` by the 1×1 node `scalar`.
    pub fn scale_by(&mut self, scalar: Var, x: Var) -> Result<Var> {
        if self.value(scalar).len() != 1 {
            return Err(Error::dim("scale_by", format!("scalar operand has shape {:?}", self.value(scalar).shape())));
        }
        let s = self.value(scalar).item();
        let tx = self.value(x);
        let out = tx.values().iter().map(|v| v * s).collect();
        let t = Tensor::from_parts(tx.shape().to_vec(), out);
        Ok(self.push(t, Op::ScaleBy { scalar, x }))
    }

    /// Adds the 1×n `row` to every row of the m×n `x` (bias add).
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(x, "add_row")?;
        let (r, n2) = self.dims(row, "add_row")?;
        if r != 1 || n != n2 {
            return Err(Error::dim("add_row", format!("[{m}x{n}] + [{r}x{n2}]")));
        }
        let b = self.value(row).values().to_vec();
        let mut out = self.value(x).values().to_vec();
        for chunk in out.chunks_mut(n) {
            for (o, bv) in chunk.iter_mut().zip(&b) {
                *o += bv;
            }
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::AddRow { x, row }))
    }

    /// `x·w + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn activate(&mut self, x: Var, kind: Activation) -> Var {
        let tx = self.value(x);
        let out = tx.values().iter().map(|v| kind.apply(*v)).collect();
        let t = Tensor::from_parts(tx.shape().to_vec(), out);
        self.push(t, Op::Act(x, kind))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activate(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activate(x, Activation::Tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activate(x, Activation::Relu)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims(x, "softmax_rows")?;
        let mut out = self.value(x).values().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::SoftmaxRows(x)))
    }

    pub fn reduce(&mut self, x: Var, kind: Reduce) -> Result<Var> {
        match kind {
            Reduce::MeanRows => self.mean_rows(x),
            Reduce::Sum => Ok(self.sum(x)),
        }
    }

    /// Column-wise mean of an m×n matrix as a 1×n row, invariant to row order.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims(x, "mean_rows")?;
        if m == 0 {
            return Err(Error::dim("mean_rows", "no rows"));
        }
        // Sorted column sums, so row order never changes the result.
        let values = self.value(x).values();
        let mut column = vec![0.0; m];
        let out = (0..n)
            .map(|c| {
                for (r, t) in column.iter_mut().enumerate() {
                    *t = values[r * n + c];
                }
                unordered_sum(&mut column) / m as f64
            })
            .collect();
        Ok(self.push(Tensor::from_parts(vec![1, n], out), Op::MeanRows(x)))
    }

    /// Sum of all entries as a 1×1 node.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).values().iter().sum();
        self.push(Tensor::from_parts(vec![1, 1], vec![s]), Op::Sum(x))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::dim("concat_rows", "no operands"));
        };
        let (_, n) = self.dims(first, "concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p, "concat_rows")?;
            if c != n {
                return Err(Error::dim("concat_rows", format!("width {c} vs {n}")));
            }
            rows += r;
            out.extend_from_slice(self.value(p).values());
        }
        Ok(self.push(Tensor::from_parts(vec![rows, n], out), Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::dim("concat_cols", "no operands"));
        };
        let (m, _) = self.dims(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p, "concat_cols")?;
            if r != m {
                return Err(Error::dim("concat_cols", format!("height {r} vs {m}")));
            }
            widths.push(c);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).values()[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(x, "slice_rows")?;
        if len == 0 || start + len > m {
            return Err(Error::dim("slice_rows", format!("rows {start}..{} of {m}", start + len)));
        }
        let out = self.value(x).values()[start * n..(start + len) * n].to_vec();
        Ok(self.push(Tensor::from_parts(vec![len, n], out), Op::SliceRows { x, start }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.dims(x, "transpose")?;
        let out = transpose_raw(self.value(x).values(), m, n);
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::Transpose(x)))
    }

    /// Cosine similarity of two equally shaped nodes, as a 1×1 node.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim("cosine", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let (na, nb) = (dot(ta.values(), ta.values()).sqrt(), dot(tb.values(), tb.values()).sqrt());
        if na < MIN_NORM || nb < MIN_NORM {
            return Err(Error::Degenerate(format!("cosine operand norms {na:e}, {nb:e}")));
        }
        let c = dot(ta.values(), tb.values()) / (na * nb);
        Ok(self.push(Tensor::from_parts(vec![1, 1], vec![c]), Op::Cosine(a, b)))
    }

    /// Bidirectional hinge loss summed over all in-batch negatives of a
    /// square similarity matrix whose diagonal holds the positives.
    pub fn triplet_loss(&mut self, s: Var, margin: f64) -> Result<Var> {
        let (m, n) = self.dims(s, "triplet_loss")?;
        if m != n {
            return Err(Error::dim("triplet_loss", format!("similarity matrix is {m}x{n}")));
        }
        let loss = triplet_value(self.value(s).values(), n, margin);
        Ok(self.push(Tensor::from_parts(vec![1, 1], vec![loss]), Op::Triplet { s, margin }))
    }

    /// Reverse sweep from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim("backward", format!("loss must be scalar, got {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }

        let bound = self
            .bound_order
            .iter()
            .filter(|(v, _)| v.0 <= loss.0)
            .map(|(v, name)| (name.clone(), *v))
            .collect();
        Ok(Gradients { grads, bound })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                let bt = transpose_raw(tb.values(), k, n);
                let da = matmul_raw(g, &bt, m, n, k);
                accumulate(grads, *a, &da);
                let at = transpose_raw(ta.values(), m, k);
                let db = matmul_raw(&at, g, k, m, n);
                accumulate(grads, *b, &db);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                accumulate(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a).values(), self.value(*b).values());
                let da: Vec<f64> = g.iter().zip(tb).map(|(gv, bv)| gv * bv).collect();
                let db: Vec<f64> = g.iter().zip(ta).map(|(gv, av)| gv * av).collect();
                accumulate(grads, *a, &da);
                accumulate(grads, *b, &db);
            }
            Op::Scale(a, c) => {
                let da: Vec<f64> = g.iter().map(|v| v * c).collect();
                accumulate(grads, *a, &da);
            }
            Op::Shift(a) => accumulate(grads, *a, g),
            Op::ScaleBy { scalar, x } => {
                let s = self.value(*scalar).item();
                let dx: Vec<f64> = g.iter().map(|v| v * s).collect();
                accumulate(grads, *x, &dx);
                let ds = dot(g, self.value(*x).values());
                accumulate(grads, *scalar, &[ds]);
            }
            Op::AddRow { x, row } => {
                accumulate(grads, *x, g);
                let n = self.value(*row).len();
                let mut db = vec![0.0; n];
                for chunk in g.chunks(n) {
                    for (d, v) in db.iter_mut().zip(chunk) {
                        *d += v;
                    }
                }
                accumulate(grads, *row, &db);
            }
            Op::Act(x, kind) => {
                let dx: Vec<f64> = g
                    .iter()
                    .zip(y.values())
                    .map(|(gv, yv)| gv * kind.derivative_from_output(*yv))
                    .collect();
                accumulate(grads, *x, &dx);
            }
            Op::SoftmaxRows(x) => {
                let n = y.shape()[1];
                let mut dx = vec![0.0; g.len()];
                for ((drow, grow), yrow) in dx.chunks_mut(n).zip(g.chunks(n)).zip(y.values().chunks(n)) {
                    let inner = dot(grow, yrow);
                    for ((d, gv), yv) in drow.iter_mut().zip(grow).zip(yrow) {
                        *d = yv * (gv - inner);
                    }
                }
                accumulate(grads, *x, &dx);
            }
            Op::MeanRows(x) => {
                let tx = self.value(*x);
                let m = tx.shape()[0] as f64;
                let dx: Vec<f64> = (0..tx.len()).map(|i| g[i % g.len()] / m).collect();
                accumulate(grads, *x, &dx);
            }
            Op::Sum(x) => {
                let dx = vec![g[0]; self.value(*x).len()];
                accumulate(grads, *x, &dx);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    accumulate(grads, *p, &g[offset..offset + len]);
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let m = y.shape()[0];
                let n = y.shape()[1];
                let mut col = 0;
                for p in parts {
                    let w = self.value(*p).shape()[1];
                    let mut dp = Vec::with_capacity(m * w);
                    for i in 0..m {
                        dp.extend_from_slice(&g[i * n + col..i * n + col + w]);
                    }
                    accumulate(grads, *p, &dp);
                    col += w;
                }
            }
            Op::SliceRows { x, start } => {
                let tx = self.value(*x);
                let n = tx.shape()[1];
                let mut dx = vec![0.0; tx.len()];
                dx[start * n..start * n + g.len()].copy_from_slice(g);
                accumulate(grads, *x, &dx);
            }
            Op::Transpose(x) => {
                let (m, n) = (y.shape()[0], y.shape()[1]);
                accumulate(grads, *x, &transpose_raw(g, m, n));
            }
            Op::Cosine(a, b) => {
                let (ta, tb) = (self.value(*a).values(), self.value(*b).values());
                let (na, nb) = (dot(ta, ta).sqrt(), dot(tb, tb).sqrt());
                let c = y.item();
                let da: Vec<f64> = ta
                    .iter()
                    .zip(tb)
                    .map(|(av, bv)| g[0] * (bv / (na * nb) - c * av / (na * na)))
                    .collect();
                let db: Vec<f64> = ta
                    .iter()
                    .zip(tb)
                    .map(|(av, bv)| g[0] * (av / (na * nb) - c * bv / (nb * nb)))
                    .collect();
                accumulate(grads, *a, &da);
                accumulate(grads, *b, &db);
            }
            Op::Triplet { s, margin } => {
                let ts = self.value(*s);
                let n = ts.shape()[0];
                let sv = ts.values();
                let mut ds = vec![0.0; sv.len()];
                for i in 0..n {
                    let pos = sv[i * n + i];
                    for j in (0..n).filter(|&j| j != i) {
                        if margin - pos + sv[i * n + j] > 0.0 {
                            ds[i * n + j] += g[0];
                            ds[i * n + i] -= g[0];
                        }
                        if margin - pos + sv[j * n + i] > 0.0 {
                            ds[j * n + i] += g[0];
                            ds[i * n + i] -= g[0];
                        }
                    }
                }
                accumulate(grads, *s, &ds);
            }
        }
    }
}

/// Value of the bidirectional hinge loss for a row-major n×n matrix.
pub(crate) fn triplet_value(s: &[f64], n: usize, margin: f64) -> f64 {
    let mut loss = 0.0;
    for i in 0..n {
        let pos = s[i * n + i];
        for j in (0..n).filter(|&j| j != i) {
            loss += (margin - pos + s[i * n + j]).max(0.0);
            loss += (margin - pos + s[j * n + i]).max(0.0);
        }
    }
    loss
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += x;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

/// Adjoints of the leaves reached by a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    bound: Vec<(String, Var)>,
}

impl Gradients {
    /// Adjoint of leaf `v`; `None` when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adjoints of every parameter bound on the tape, zero-filled where the
    /// loss does not reach the parameter.
    pub fn params(&self, tape: &Tape) -> BTreeMap<String, Vec<f64>> {
        self.bound
            .iter()
            .map(|(name, v)| {
                let g = self
                    .wrt(*v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; tape.value(*v).len()]);
                (name.clone(), g)
            })
            .collect()
    }
}
