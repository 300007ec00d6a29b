//! Dense row-major tensor with a deterministic matmul.
//!
//! Accumulation order is pinned: the i-k-j loop adds contributions for a
//! fixed output cell in ascending k, which is the same summation order as the
//! textbook i-j-k triple loop, so the two produce bit-identical results. Every
//! constructor and every operation checks that stored values stay finite.

use crate::error::{Error, Result};
use crate::numerics::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::shape(format!(
                "shape {:?} wants {} values, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::domain("tensor holds a non-finite value"));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    /// Fill from a stream with independent U[lo, hi) draws, row-major order.
    pub fn random_uniform(
        shape: Vec<usize>,
        stream: &mut RngStream,
        lo: f64,
        hi: f64,
    ) -> Result<Self> {
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(stream.uniform(lo, hi)?);
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the backing storage. Callers are responsible for
    /// keeping values finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row count of a 2-D tensor. Panics on other ranks.
    pub fn rows(&self) -> usize {
        assert_eq!(self.ndim(), 2, "rows() needs a 2-D tensor");
        self.shape[0]
    }

    /// Column count of a 2-D tensor. Panics on other ranks.
    pub fn cols(&self) -> usize {
        assert_eq!(self.ndim(), 2, "cols() needs a 2-D tensor");
        self.shape[1]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    /// 2-D matrix product, i-k-j loop order, ascending-k accumulation.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.ndim() != 2 || rhs.ndim() != 2 {
            return Err(Error::shape("matmul operands must be 2-D"));
        }
        let (m, kdim) = (self.shape[0], self.shape[1]);
        let (krhs, n) = (rhs.shape[0], rhs.shape[1]);
        if kdim != krhs {
            return Err(Error::shape(format!(
                "matmul inner dims differ: {kdim} vs {krhs}"
            )));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &self.data[i * kdim..(i + 1) * kdim];
            let orow = &mut out[i * n..(i + 1) * n];
            for (k, &a) in arow.iter().enumerate() {
                let brow = &rhs.data[k * n..(k + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::domain("matmul overflowed to a non-finite value"));
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.ndim() != 2 {
            return Err(Error::shape("transpose needs a 2-D tensor"));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data: out,
        })
    }
}
