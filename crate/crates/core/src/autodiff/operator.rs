//! Constant linear operators applied to tape values (graph propagation matrices).

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Square matrix in compressed-sparse-row form.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub offsets: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.n, self.n]);
        for i in 0..self.n {
            for k in self.offsets[i]..self.offsets[i + 1] {
                t.set(i, self.cols[k], self.vals[k]);
            }
        }
        t
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    fn mul_dense(&self, h: &Tensor) -> Tensor {
        let d = h.cols();
        let mut out = Tensor::zeros(&[self.n, d]);
        for i in 0..self.n {
            let orow = out.row_mut(i);
            for k in self.offsets[i]..self.offsets[i + 1] {
                let a = self.vals[k];
                for (o, &x) in orow.iter_mut().zip(h.row(self.cols[k])) {
                    *o += a * x;
                }
            }
        }
        out
    }

    fn mul_transpose_dense(&self, g: &Tensor) -> Tensor {
        let d = g.cols();
        let mut out = Tensor::zeros(&[self.n, d]);
        for i in 0..self.n {
            let src = g.row(i);
            for k in self.offsets[i]..self.offsets[i + 1] {
                let a = self.vals[k];
                for (o, &x) in out.row_mut(self.cols[k]).iter_mut().zip(src) {
                    *o += a * x;
                }
            }
        }
        out
    }
}

/// A fixed `n x n` matrix `P` used as `P · H` on the tape.
#[derive(Clone, Debug, PartialEq)]
pub enum Propagator {
    Dense(Tensor),
    Sparse(CsrMatrix),
}

impl Propagator {
    pub fn size(&self) -> usize {
        match self {
            Propagator::Dense(t) => t.rows(),
            Propagator::Sparse(m) => m.n,
        }
    }

    pub fn to_dense(&self) -> Tensor {
        match self {
            Propagator::Dense(t) => t.clone(),
            Propagator::Sparse(m) => m.to_dense(),
        }
    }

    pub fn apply(&self, h: &Tensor) -> Result<Tensor> {
        self.check(h)?;
        match self {
            Propagator::Dense(p) => p.matmul(h),
            Propagator::Sparse(m) => Ok(m.mul_dense(h)),
        }
    }

    pub fn apply_transpose(&self, g: &Tensor) -> Result<Tensor> {
        self.check(g)?;
        match self {
            Propagator::Dense(p) => p.matmul_tn(g),
            Propagator::Sparse(m) => Ok(m.mul_transpose_dense(g)),
        }
    }

    fn check(&self, h: &Tensor) -> Result<()> {
        let (r, _) = h.dims2()?;
        if r != self.size() {
            return Err(Error::config(format!(
                "propagate: operator is {n}x{n} but input has {r} rows",
                n = self.size()
            )));
        }
        Ok(())
    }
}
