use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PiicError, Result};
use crate::gaussian::{cholesky_psd, is_psd, psd_sqrt_rows};

/// Scaled unscented transform parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaPointConfig {
    /// Spread `a`, in `(0, 1]`.
    pub alpha: f64,
    /// Prior-distribution weight `b` (2 is optimal for Gaussians).
    pub beta: f64,
    /// Secondary scaling `k`.
    pub kappa: f64,
}

impl Default for SigmaPointConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-1,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

impl SigmaPointConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(PiicError::Validation(format!(
                "sigma-point spread must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.alpha * self.alpha * (n as f64 + self.kappa) > 0.0) {
            return Err(PiicError::Validation(
                "sigma-point scaling n + lambda must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Mean weights, covariance weights and the scale `n + lambda`.
    pub fn weights(&self, n: usize) -> (Vec<f64>, Vec<f64>, f64) {
        let nf = n as f64;
        let c = self.alpha * self.alpha * (nf + self.kappa);
        let lambda = c - nf;
        let wi = 0.5 / c;
        let mut wm = vec![wi; 2 * n + 1];
        let mut wc = wm.clone();
        wm[0] = lambda / c;
        wc[0] = wm[0] + 1.0 - self.alpha * self.alpha + self.beta;
        (wm, wc, c)
    }

    pub fn sigma_points(&self, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<SigmaSet> {
        let n = mean.len();
        self.validate(n)?;
        let (wm, wc, c) = self.weights(n);
        let root = matrix_sqrt(cov)?;
        let s = c.sqrt();
        let mut points = Vec::with_capacity(2 * n + 1);
        points.push(mean.clone());
        for i in 0..n {
            points.push(mean + root.column(i) * s);
        }
        for i in 0..n {
            points.push(mean - root.column(i) * s);
        }
        Ok(SigmaSet { points, wm, wc })
    }
}

/// Column square root `l` with `l l^T = cov`; zero columns pad a
/// rank-deficient factor.
fn matrix_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if let Ok(f) = cholesky_psd(cov, &[0.0]) {
        return Ok(f.l);
    }
    if !is_psd(cov, 1e-9) {
        return Err(PiicError::Numerical(
            "covariance handed to the unscented transform is indefinite".into(),
        ));
    }
    let rows = psd_sqrt_rows(cov);
    let mut l = DMatrix::zeros(n, n);
    l.view_mut((0, 0), (n, rows.nrows()))
        .copy_from(&rows.transpose());
    Ok(l)
}

/// Sigma points with their weights.
#[derive(Debug, Clone)]
pub struct SigmaSet {
    pub points: Vec<DVector<f64>>,
    pub wm: Vec<f64>,
    pub wc: Vec<f64>,
}

impl SigmaSet {
    pub fn map<F>(&self, f: F) -> Result<Vec<DVector<f64>>>
    where
        F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    {
        self.points.iter().map(f).collect()
    }

    pub fn mean(&self, ys: &[DVector<f64>]) -> DVector<f64> {
        let mut m = DVector::zeros(ys[0].len());
        for (w, y) in self.wm.iter().zip(ys) {
            m.axpy(*w, y, 1.0);
        }
        m
    }

    /// `sum_i wc_i (x_i - xm)(y_i - ym)^T`.
    pub fn cross(
        &self,
        xs: &[DVector<f64>],
        xm: &DVector<f64>,
        ys: &[DVector<f64>],
        ym: &DVector<f64>,
    ) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(xm.len(), ym.len());
        for ((w, x), y) in self.wc.iter().zip(xs).zip(ys) {
            c.ger(*w, &(x - xm), &(y - ym), 1.0);
        }
        c
    }

    pub fn cov(&self, ys: &[DVector<f64>], ym: &DVector<f64>) -> DMatrix<f64> {
        crate::gaussian::symmetrize(&self.cross(ys, ym, ys, ym))
    }

    /// `E[y y^T]` as covariance plus outer product of the mean.
    pub fn second_moment(&self, ys: &[DVector<f64>]) -> DMatrix<f64> {
        let m = self.mean(ys);
        let mut s = self.cov(ys, &m);
        s.ger(1.0, &m, &m, 1.0);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn weights_sum_to_one() {
        for cfg in [
            SigmaPointConfig::default(),
            SigmaPointConfig { alpha: 1.0, beta: 0.0, kappa: 2.0 },
            SigmaPointConfig { alpha: 0.5, beta: 2.0, kappa: 1.0 },
        ] {
            for n in 1..6 {
                let (wm, _, _) = cfg.weights(n);
                assert_abs_diff_eq!(wm.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn reproduces_mean_and_covariance() {
        let m = DVector::from_row_slice(&[1.0, -2.0, 0.5]);
        let p = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5]);
        let s = SigmaPointConfig::default().sigma_points(&m, &p).unwrap();
        let ys = s.map(|x| Ok(x.clone())).unwrap();
        let ym = s.mean(&ys);
        assert!((ym - &m).amax() < 1e-12);
        assert!((s.cov(&ys, &m) - p).amax() < 1e-10);
    }

    #[test]
    fn rank_deficient_covariance() {
        let m = DVector::from_row_slice(&[0.0, 0.0]);
        let p = DMatrix::from_element(2, 2, 1.0);
        let s = SigmaPointConfig::default().sigma_points(&m, &p).unwrap();
        let ys = s.map(|x| Ok(x.clone())).unwrap();
        assert!((s.cov(&ys, &m) - p).amax() < 1e-10);
    }

    #[test]
    fn fourth_moment_with_tuned_spread() {
        // n = 1, a = 1, k = 2 puts the outer points at +-sqrt(3).
        let cfg = SigmaPointConfig { alpha: 1.0, beta: 0.0, kappa: 2.0 };
        let s = cfg
            .sigma_points(&DVector::zeros(1), &DMatrix::identity(1, 1))
            .unwrap();
        let ys = s.map(|x| Ok(DVector::from_element(1, x[0] * x[0]))).unwrap();
        assert_abs_diff_eq!(s.second_moment(&ys)[(0, 0)], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_spread() {
        let cfg = SigmaPointConfig { alpha: 1.5, ..Default::default() };
        assert!(cfg.validate(2).is_err());
    }
}
