//! Symmetric block-tridiagonal systems.

use nalgebra::{DMatrix, DVector};

use crate::error::{PiicError, Result};
use crate::gaussian::{cholesky_psd, condition_estimate, symmetrize, PsdFactor};

/// `diag[i]` are the diagonal blocks, `lower[i]` the block at `(i + 1, i)`.
#[derive(Debug, Clone)]
pub struct BlockTridiagonal {
    pub diag: Vec<DMatrix<f64>>,
    pub lower: Vec<DMatrix<f64>>,
}

/// Schur-complement factorization `S_0 = D_0`,
/// `S_{i+1} = D_{i+1} - E_i S_i^{-1} E_i^T`.
#[derive(Debug, Clone)]
pub struct BlockTridiagonalFactor {
    schur: Vec<PsdFactor>,
    lower: Vec<DMatrix<f64>>,
}

impl BlockTridiagonal {
    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            diag: sizes.iter().map(|&n| DMatrix::zeros(n, n)).collect(),
            lower: sizes
                .windows(2)
                .map(|w| DMatrix::zeros(w[1], w[0]))
                .collect(),
        }
    }

    pub fn blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn mul_vec(&self, x: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let n = self.blocks();
        (0..n)
            .map(|i| {
                let mut y = &self.diag[i] * &x[i];
                if i > 0 {
                    y += &self.lower[i - 1] * &x[i - 1];
                }
                if i + 1 < n {
                    y += self.lower[i].tr_mul(&x[i + 1]);
                }
                y
            })
            .collect()
    }

    /// Adds `lambda * diag(D_i)` to every diagonal block.
    pub fn damped(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        for d in &mut out.diag {
            for k in 0..d.nrows() {
                d[(k, k)] *= 1.0 + lambda;
            }
        }
        out
    }

    /// Strict factorization: any non-positive-definite pivot is an error.
    pub fn factor(&self) -> Result<BlockTridiagonalFactor> {
        let n = self.blocks();
        let mut schur: Vec<PsdFactor> = Vec::with_capacity(n);
        for i in 0..n {
            let s = if i == 0 {
                symmetrize(&self.diag[0])
            } else {
                let e = &self.lower[i - 1];
                let prev = &schur[i - 1];
                symmetrize(&(&self.diag[i] - e * prev.solve(&e.transpose())))
            };
            let f = cholesky_psd(&s, &[0.0]).map_err(|_| PiicError::EStep {
                t: i,
                source: Box::new(PiicError::Factorization {
                    max_jitter: 0.0,
                    condition: condition_estimate(&s),
                }),
            })?;
            schur.push(f);
        }
        Ok(BlockTridiagonalFactor {
            schur,
            lower: self.lower.clone(),
        })
    }
}

impl BlockTridiagonalFactor {
    pub fn solve(&self, b: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let n = self.schur.len();
        let mut y: Vec<DVector<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut yi = b[i].clone();
            if i > 0 {
                yi -= &self.lower[i - 1] * self.schur[i - 1].solve_vec(&y[i - 1]);
            }
            y.push(yi);
        }
        let mut x = vec![DVector::zeros(0); n];
        for i in (0..n).rev() {
            let mut r = y[i].clone();
            if i + 1 < n {
                r -= self.lower[i].tr_mul(&x[i + 1]);
            }
            x[i] = self.schur[i].solve_vec(&r);
        }
        x
    }

    /// Diagonal blocks of the inverse:
    /// `C_N = S_N^{-1}`, `C_i = S_i^{-1} + S_i^{-1} E_i^T C_{i+1} E_i S_i^{-1}`.
    pub fn marginal_covariances(&self) -> Vec<DMatrix<f64>> {
        let n = self.schur.len();
        let mut out = vec![DMatrix::zeros(0, 0); n];
        out[n - 1] = self.schur[n - 1].inverse();
        for i in (0..n - 1).rev() {
            let sinv = self.schur[i].inverse();
            let g = &self.lower[i] * &sinv;
            out[i] = symmetrize(&(&sinv + g.transpose() * &out[i + 1] * &g));
        }
        out
    }
}
