//! One-pass ridge regression of the analysis weights.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernels::condition_estimate;
use crate::tensor::DenseTensor;

/// Smallest ridge parameter accepted unless explicitly overridden.
pub const MIN_LAMBDA: f64 = 1e-10;

/// Streaming sums `C_ZZ = sum_p z_p z_p'` and `C_yZ = sum_p y_p z_p'`.
///
/// Only the upper triangle of `C_ZZ` is stored, packed row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeAccumulator {
    dim: usize,
    outputs: usize,
    czz_upper: Vec<f64>,
    cyz: Vec<f64>,
    count: usize,
    lambda: f64,
}

impl RidgeAccumulator {
    pub fn new(dim: usize, outputs: usize, lambda: f64) -> Result<Self> {
        if !(lambda >= MIN_LAMBDA) {
            return Err(Error::invalid(format!(
                "ridge parameter {lambda} below {MIN_LAMBDA}; use new_with_any_lambda to override"
            )));
        }
        Self::new_with_any_lambda(dim, outputs, lambda)
    }

    /// Accepts any `lambda >= 0`; a zero ridge needs a full-rank `C_ZZ`.
    pub fn new_with_any_lambda(dim: usize, outputs: usize, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("invalid ridge parameter {lambda}")));
        }
        if dim == 0 || outputs == 0 {
            return Err(Error::invalid("accumulator dimensions must be positive"));
        }
        Ok(Self {
            dim,
            outputs,
            czz_upper: vec![0.0; dim * (dim + 1) / 2],
            cyz: vec![0.0; outputs * dim],
            count: 0,
            lambda,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    #[inline]
    fn packed(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= j);
        i * (2 * self.dim - i + 1) / 2 + (j - i)
    }

    /// Adds one sample. Zero entries of `z` are skipped, which makes the
    /// update proportional to the square of the number of active entries.
    pub fn accumulate(&mut self, z: &[f64], target: &[f64]) -> Result<()> {
        if z.len() != self.dim || target.len() != self.outputs {
            return Err(Error::shape(format!(
                "sample ({}, {}) does not match accumulator ({}, {})",
                z.len(),
                target.len(),
                self.dim,
                self.outputs
            )));
        }
        let nz: Vec<usize> = (0..self.dim).filter(|&i| z[i] != 0.0).collect();
        for (a, &i) in nz.iter().enumerate() {
            let zi = z[i];
            let base = self.packed(i, i) - i;
            for &j in &nz[a..] {
                self.czz_upper[base + j] += zi * z[j];
            }
        }
        for (r, &y) in target.iter().enumerate() {
            if y != 0.0 {
                let row = &mut self.cyz[r * self.dim..(r + 1) * self.dim];
                for &i in &nz {
                    row[i] += y * z[i];
                }
            }
        }
        self.count += 1;
        Ok(())
    }

    /// Adds the sums of another shard. Merging shards in index order gives a
    /// deterministic total.
    pub fn merge(&mut self, other: &RidgeAccumulator) -> Result<()> {
        if other.dim != self.dim || other.outputs != self.outputs {
            return Err(Error::shape("cannot merge accumulators of different size"));
        }
        self.czz_upper
            .iter_mut()
            .zip(&other.czz_upper)
            .for_each(|(a, b)| *a += b);
        self.cyz.iter_mut().zip(&other.cyz).for_each(|(a, b)| *a += b);
        self.count += other.count;
        Ok(())
    }

    /// Full symmetric `C_ZZ`.
    pub fn czz(&self) -> DMatrix<f64> {
        let d = self.dim;
        let mut m = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v = self.czz_upper[self.packed(i, j)];
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    pub fn cyz(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.outputs, self.dim, &self.cyz)
    }

    /// `W_Z = C_yZ (C_ZZ + lambda I)^{-1}` through a Cholesky factorization.
    pub fn solve(&self) -> Result<DenseTensor> {
        let mut a = self.czz();
        for i in 0..self.dim {
            a[(i, i)] += self.lambda;
        }
        let rhs = self.cyz().transpose();
        let chol = a.clone().cholesky().ok_or_else(|| Error::Singular {
            what: "C_ZZ + lambda I is not positive definite",
            condition: condition_estimate(&a),
        })?;
        let wt = chol.solve(&rhs);
        if wt.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular {
                what: "ridge solution is not finite",
                condition: condition_estimate(&a),
            });
        }
        let w = wt.transpose();
        let data = (0..self.outputs)
            .flat_map(|r| (0..self.dim).map(move |c| (r, c)))
            .map(|(r, c)| w[(r, c)])
            .collect();
        DenseTensor::matrix(self.outputs, self.dim, data)
    }
}
