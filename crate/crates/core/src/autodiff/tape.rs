//! Wengert-list reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] borrows one [`ParamVector`]; parameters enter the tape lazily as
//! leaf nodes (at most one node per parameter). Every primitive evaluates
//! eagerly, checks its output for non-finite values, and records enough to
//! run a single reverse sweep. [`Tape::backward`] takes `&self`, so the same
//! tape can be differentiated from several scalar roots.

use std::sync::Arc;

use super::operator::Propagator;
use super::params::ParamVector;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulConst(Var, Arc<Tensor>),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    GatherRows(Var, Arc<[usize]>),
    PickCols(Var, Arc<[usize]>),
    ConcatCols(Vec<Var>),
    Propagate(Arc<Propagator>, Var),
    WeightedSum(Vec<(f64, Var)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub struct Tape<'p> {
    params: &'p ParamVector,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamVector) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.layout().entries().len()],
        }
    }

    pub fn params(&self) -> &ParamVector {
        self.params
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

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let t = self.value(v);
        if !t.is_scalar() {
            return Err(Error::usage(format!(
                "expected a scalar node, got shape {:?}",
                t.shape()
            )));
        }
        Ok(t.data()[0])
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if let Some(i) = value.first_non_finite() {
            return Err(Error::numeric(
                op_name,
                format!("non-finite value {} at flat index {i}", value.data()[i]),
            ));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Leaf node for the named parameter; repeated calls return the same node.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let idx = self
            .params
            .layout()
            .index_of(name)
            .ok_or_else(|| Error::usage(format!("unknown parameter `{name}`")))?;
        if let Some(v) = self.param_nodes[idx] {
            return Ok(v);
        }
        let value = self.params.tensor(name)?;
        let v = self.push("param", value, Op::Param(idx))?;
        self.param_nodes[idx] = Some(v);
        Ok(v)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push("constant", value, Op::Constant)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push("matmul", value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push("add", value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push("sub", value, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push("mul", value, Op::Mul(a, b))
    }

    /// Adds a `1 x d` row to every row of an `n x d` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, d) = self.value(a).dims2()?;
        let r = self.value(row);
        if r.dims2()? != (1, d) {
            return Err(Error::config(format!(
                "add_row: expected a 1x{d} row, got {:?}",
                r.shape()
            )));
        }
        let mut out = self.value(a).clone();
        let rv = r.data().to_vec();
        for i in 0..n {
            for (o, b) in out.row_mut(i).iter_mut().zip(&rv) {
                *o += b;
            }
        }
        self.push("add_row", out, Op::AddRow(a, row))
    }

    /// Elementwise product with a constant of the same shape (masks, dropout).
    pub fn mul_const(&mut self, a: Var, c: Arc<Tensor>) -> Result<Var> {
        let value = self.value(a).zip_map(&c, |x, y| x * y)?;
        self.push("mul_const", value, Op::MulConst(a, c))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x * s);
        self.push("scale", value, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push("relu", value, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        self.push("sigmoid", value, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(softplus);
        self.push("softplus", value, Op::Softplus(a))
    }

    /// Row-wise log-softmax of a matrix.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (n, _) = self.value(a).dims2()?;
        let mut out = self.value(a).clone();
        for i in 0..n {
            let row = out.row_mut(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        self.push("log_softmax", out, Op::LogSoftmax(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push("sum", value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::usage("mean of an empty tensor"));
        }
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        self.push("mean", value, Op::Mean(a))
    }

    /// Sums each row: `n x d -> n x 1`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let (n, _) = self.value(a).dims2()?;
        let t = self.value(a);
        let data = (0..n).map(|i| t.row(i).iter().sum()).collect();
        let value = Tensor::matrix(n, 1, data)?;
        self.push("row_sum", value, Op::RowSum(a))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        let value = self.value(a).select_rows(&idx)?;
        self.push("gather_rows", value, Op::GatherRows(a, idx))
    }

    /// Picks `a[i, idx[i]]` per row: `n x c -> n x 1`.
    pub fn pick_cols(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var> {
        let (n, c) = self.value(a).dims2()?;
        if idx.len() != n {
            return Err(Error::config(format!(
                "pick_cols: {} indices for {n} rows",
                idx.len()
            )));
        }
        let t = self.value(a);
        let mut data = Vec::with_capacity(n);
        for (i, &j) in idx.iter().enumerate() {
            if j >= c {
                return Err(Error::usage(format!("pick_cols: column {j} out of range ({c})")));
            }
            data.push(t.get(i, j));
        }
        let value = Tensor::matrix(n, 1, data)?;
        self.push("pick_cols", value, Op::PickCols(a, idx))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::usage("concat_cols of nothing"))?;
        let n = self.value(*first).dims2()?.0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != n {
                return Err(Error::config(format!(
                    "concat_cols: row counts differ ({r} vs {n})"
                )));
            }
            total += c;
        }
        let mut data = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let value = Tensor::matrix(n, total, data)?;
        self.push("concat_cols", value, Op::ConcatCols(parts.to_vec()))
    }

    /// `P · a` for a constant operator `P`.
    pub fn propagate(&mut self, p: Arc<Propagator>, a: Var) -> Result<Var> {
        let value = p.apply(self.value(a))?;
        self.push("propagate", value, Op::Propagate(p, a))
    }

    /// `Σ wᵢ·xᵢ` over scalar nodes with constant coefficients.
    pub fn weighted_sum(&mut self, terms: &[(f64, Var)]) -> Result<Var> {
        let mut acc = 0.0;
        for &(w, v) in terms {
            if !w.is_finite() {
                return Err(Error::numeric("weighted_sum", format!("weight {w}")));
            }
            acc += w * self.scalar(v)?;
        }
        self.push(
            "weighted_sum",
            Tensor::scalar(acc),
            Op::WeightedSum(terms.to_vec()),
        )
    }

    /// Gradient of a scalar node with respect to every parameter of the bound vector.
    ///
    /// Parameters that never entered the tape receive zero gradient.
    pub fn backward(&self, loss: Var) -> Result<ParamVector> {
        if !self.value(loss).is_scalar() {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads = ParamVector::zeros_like(self.params);
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Constant => {}
                Op::Param(pi) => {
                    let e = &self.params.layout().entries()[*pi];
                    for (dst, v) in grads.values_mut()[e.range()].iter_mut().zip(g.data()) {
                        *dst += v;
                    }
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_nt(self.value(*b))?;
                    let db = self.value(*a).matmul_tn(&g)?;
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *b, g.clone());
                    accumulate(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.map(|x| -x));
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), |x, y| x * y)?;
                    let db = g.zip_map(self.value(*a), |x, y| x * y)?;
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::AddRow(a, row) => {
                    let (n, d) = g.dims2()?;
                    let mut dr = vec![0.0; d];
                    for i in 0..n {
                        for (s, x) in dr.iter_mut().zip(g.row(i)) {
                            *s += x;
                        }
                    }
                    accumulate(&mut adj, *row, Tensor::matrix(1, d, dr)?);
                    accumulate(&mut adj, *a, g);
                }
                Op::MulConst(a, c) => {
                    accumulate(&mut adj, *a, g.zip_map(c, |x, y| x * y)?);
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    accumulate(&mut adj, *a, g.map(|x| x * s));
                }
                Op::Relu(a) => {
                    let da = g.zip_map(self.value(*a), |x, inp| if inp > 0.0 { x } else { 0.0 })?;
                    accumulate(&mut adj, *a, da);
                }
                Op::Sigmoid(a) => {
                    let da = g.zip_map(&node.value, |x, y| x * y * (1.0 - y))?;
                    accumulate(&mut adj, *a, da);
                }
                Op::Softplus(a) => {
                    let da = g.zip_map(self.value(*a), |x, inp| x * sigmoid(inp))?;
                    accumulate(&mut adj, *a, da);
                }
                Op::LogSoftmax(a) => {
                    let (n, _) = g.dims2()?;
                    let mut da = g.clone();
                    for i in 0..n {
                        let gs: f64 = g.row(i).iter().sum();
                        let y = node.value.row(i);
                        for (d, &yv) in da.row_mut(i).iter_mut().zip(y) {
                            *d -= yv.exp() * gs;
                        }
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::Sum(a) => {
                    let gv = g.data()[0];
                    accumulate(&mut adj, *a, Tensor::filled(self.value(*a).shape(), gv));
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len() as f64;
                    let gv = g.data()[0] / n;
                    accumulate(&mut adj, *a, Tensor::filled(self.value(*a).shape(), gv));
                }
                Op::RowSum(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    let mut da = Tensor::zeros(&shape);
                    for i in 0..shape[0] {
                        let gi = g.data()[i];
                        da.row_mut(i).iter_mut().for_each(|x| *x = gi);
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::GatherRows(a, idx) => {
                    let mut da = Tensor::zeros(self.value(*a).shape());
                    for (k, &r) in idx.iter().enumerate() {
                        for (d, x) in da.row_mut(r).iter_mut().zip(g.row(k)) {
                            *d += x;
                        }
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::PickCols(a, idx) => {
                    let mut da = Tensor::zeros(self.value(*a).shape());
                    for (i, &j) in idx.iter().enumerate() {
                        da.set(i, j, g.data()[i]);
                    }
                    accumulate(&mut adj, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let n = g.rows();
                    let mut start = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        let mut data = Vec::with_capacity(n * c);
                        for i in 0..n {
                            data.extend_from_slice(&g.row(i)[start..start + c]);
                        }
                        accumulate(&mut adj, p, Tensor::matrix(n, c, data)?);
                        start += c;
                    }
                }
                Op::Propagate(p, a) => {
                    accumulate(&mut adj, *a, p.apply_transpose(&g)?);
                }
                Op::WeightedSum(terms) => {
                    let gv = g.data()[0];
                    for &(w, v) in terms {
                        accumulate(&mut adj, v, Tensor::scalar(w * gv));
                    }
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut adj[v.0] {
        Some(acc) => {
            for (a, x) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}
