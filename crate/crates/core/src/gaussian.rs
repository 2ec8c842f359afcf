//! Gaussian algebra shared by the smoothers and the parameter updates.
//!
//! Covariances are always symmetrized before they are factorized, and
//! factorizations walk a graded jitter schedule instead of failing on the
//! first non-positive pivot.

use nalgebra::{DMatrix, DVector};

use crate::error::{PiicError, Result};

/// Default jitter schedule. Each entry is scaled by the largest diagonal
/// magnitude of the matrix being factorized.
pub const DEFAULT_JITTER: [f64; 4] = [0.0, 1e-12, 1e-9, 1e-6];

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Lower Cholesky factor of a symmetric PSD matrix together with the jitter
/// that was needed to make it positive definite.
#[derive(Debug, Clone)]
pub struct PsdFactor {
    pub l: DMatrix<f64>,
    /// Absolute diagonal shift: `l * l^T = sym(m) + jitter * I`.
    pub jitter: f64,
}

impl PsdFactor {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `(l l^T) x = b`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self
            .l
            .solve_lower_triangular(b)
            .expect("cholesky factor has a nonzero diagonal");
        self.l
            .tr_solve_lower_triangular(&y)
            .expect("cholesky factor has a nonzero diagonal")
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self
            .l
            .solve_lower_triangular(b)
            .expect("cholesky factor has a nonzero diagonal");
        self.l
            .tr_solve_lower_triangular(&y)
            .expect("cholesky factor has a nonzero diagonal")
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        symmetrize(&self.solve(&DMatrix::identity(self.dim(), self.dim())))
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

fn try_cholesky(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

fn diag_scale(m: &DMatrix<f64>) -> f64 {
    let s = m.diagonal().iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if s > 0.0 && s.is_finite() {
        s
    } else {
        1.0
    }
}

/// Ratio of extreme eigenvalue magnitudes, used only for diagnostics.
pub fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let eig = symmetrize(m).symmetric_eigenvalues();
    let max = eig.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Cholesky factorization of `(m + m^T)/2 + eps*I` for the first `eps` in the
/// schedule (scaled by the diagonal magnitude) that succeeds.
pub fn cholesky_psd(m: &DMatrix<f64>, jitter_schedule: &[f64]) -> Result<PsdFactor> {
    if m.nrows() != m.ncols() {
        return Err(PiicError::Dimension(format!(
            "cholesky of non-square {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    let sym = symmetrize(m);
    if sym.nrows() == 0 {
        return Ok(PsdFactor {
            l: sym,
            jitter: 0.0,
        });
    }
    let scale = diag_scale(&sym);
    for &eps in jitter_schedule {
        let shift = eps * scale;
        let mut shifted = sym.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += shift;
        }
        if let Some(l) = try_cholesky(&shifted) {
            return Ok(PsdFactor { l, jitter: shift });
        }
    }
    Err(PiicError::Factorization {
        max_jitter: jitter_schedule.iter().cloned().fold(0.0, f64::max) * scale,
        condition: condition_estimate(&sym),
    })
}

pub fn cholesky_default(m: &DMatrix<f64>) -> Result<PsdFactor> {
    cholesky_psd(m, &DEFAULT_JITTER)
}

/// True when `m` is symmetric and its smallest eigenvalue is at least
/// `-tol * ||m||`.
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    if m.nrows() == 0 {
        return true;
    }
    let norm = m.norm().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).norm() > 1e-12 * norm.max(1.0) {
        return false;
    }
    let eig = symmetrize(m).symmetric_eigenvalues();
    eig.iter().all(|&v| v >= -tol * norm)
}

/// Clips the eigenvalues of a symmetric matrix from below.
pub fn clip_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return symmetrize(m);
    }
    let clipped = eig.eigenvalues.map(|v| v.max(floor));
    symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose()))
}

/// Matrix `w` with `w^T w = m` for a symmetric PSD `m`; rows belonging to
/// numerically zero eigenvalues are dropped.
pub fn psd_sqrt_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = symmetrize(m).symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(*v));
    let cutoff = 1e-14 * max;
    let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > cutoff).collect();
    let mut w = DMatrix::zeros(keep.len(), n);
    for (row, &i) in keep.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        for c in 0..n {
            w[(row, c)] = s * eig.eigenvectors[(c, i)];
        }
    }
    w
}

/// Named sub-blocks of a Gaussian vector, as `(offset, len)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockIndex {
    blocks: Vec<(usize, usize)>,
}

impl BlockIndex {
    pub fn new(blocks: Vec<(usize, usize)>) -> Self {
        Self { blocks }
    }

    pub fn range(offset: usize, len: usize) -> Self {
        Self {
            blocks: vec![(offset, len)],
        }
    }

    pub fn indices(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .flat_map(|&(o, l)| o..o + l)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.1).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks that blocks are in range and pairwise disjoint.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let idx = self.indices();
        if let Some(&bad) = idx.iter().find(|&&i| i >= dim) {
            return Err(PiicError::Index(format!(
                "block index {bad} out of range for dimension {dim}"
            )));
        }
        let mut seen = vec![false; dim];
        for i in idx {
            if seen[i] {
                return Err(PiicError::Index(format!("blocks overlap at index {i}")));
            }
            seen[i] = true;
        }
        Ok(())
    }

    fn complement(&self, dim: usize) -> Vec<usize> {
        let idx = self.indices();
        (0..dim).filter(|i| !idx.contains(i)).collect()
    }
}

fn select_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

fn select_mat(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |r, c| m[(rows[r], cols[c])])
}

/// Mean and covariance over a stacked vector of variables.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl JointGaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(PiicError::Dimension(format!(
                "mean has length {d} but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(PiicError::Validation("non-finite Gaussian moments".into()));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn marginal(&self, block: &BlockIndex) -> Result<JointGaussian> {
        block.validate(self.dim())?;
        let idx = block.indices();
        Ok(JointGaussian {
            mean: select_vec(&self.mean, &idx),
            cov: select_mat(&self.cov, &idx, &idx),
        })
    }

    /// Conditions on `value` for the observed block. The result keeps the
    /// full dimension: the observed block is pinned to `value` with zero
    /// covariance, the rest carries the conditional moments.
    pub fn condition(&self, observed: &BlockIndex, value: &DVector<f64>) -> Result<JointGaussian> {
        let d = self.dim();
        observed.validate(d)?;
        let b = observed.indices();
        if value.len() != b.len() {
            return Err(PiicError::Dimension(format!(
                "conditioning value has length {} for a block of length {}",
                value.len(),
                b.len()
            )));
        }
        let a = observed.complement(d);
        let mu_a = select_vec(&self.mean, &a);
        let mu_b = select_vec(&self.mean, &b);
        let s_aa = select_mat(&self.cov, &a, &a);
        let s_ab = select_mat(&self.cov, &a, &b);
        let s_bb = select_mat(&self.cov, &b, &b);

        let (cond_mean, cond_cov) = if a.is_empty() || b.is_empty() {
            (mu_a, s_aa)
        } else {
            let f = cholesky_default(&s_bb)?;
            // gain^T = S_bb^{-1} S_ba
            let gain_t = f.solve(&s_ab.transpose());
            let mean = &mu_a + gain_t.transpose() * (value - &mu_b);
            let cov = symmetrize(&(&s_aa - &s_ab * &gain_t));
            (mean, cov)
        };

        let mut mean = DVector::zeros(d);
        let mut cov = DMatrix::zeros(d, d);
        for (i, &bi) in b.iter().enumerate() {
            mean[bi] = value[i];
        }
        for (i, &ai) in a.iter().enumerate() {
            mean[ai] = cond_mean[i];
            for (j, &aj) in a.iter().enumerate() {
                cov[(ai, aj)] = cond_cov[(i, j)];
            }
        }
        Ok(JointGaussian { mean, cov })
    }

    pub fn is_valid(&self) -> bool {
        is_psd(&self.cov, 1e-10)
    }
}
