//! Discrete-time stochastic dynamics `x_{t+1} = F(x_t, u_t) + eta_t`.

mod linear;
mod quadcopter;
mod unicycle;

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};

use crate::error::{PiicError, Result};

pub use linear::LinearModel;
pub use quadcopter::{QuadcopterParams, QuadcopterWindModel};
pub use unicycle::{MultiUnicycleModel, UnicycleModel};

/// A discrete-time model with additive Gaussian process noise.
///
/// Implementors provide the deterministic map and the noise covariance; the
/// validated entry points (`step_mean`, `sample_step`, `linearize`) are
/// provided on top.
pub trait Dynamics: Debug + Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    /// Discretization step in seconds.
    fn dt(&self) -> f64;
    fn process_noise(&self) -> &ProcessNoise;

    /// `F(x, u)` without input validation.
    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;

    /// Closed-form Jacobians `(dF/dx, dF/du)` when the model has them.
    fn analytic_jacobians(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        None
    }

    fn tau_dim(&self) -> usize {
        self.state_dim() + self.control_dim()
    }

    /// Mean successor state for the stacked state-control vector `tau`.
    fn step_mean(&self, tau: &DVector<f64>) -> Result<DVector<f64>> {
        let (x, u) = split_tau(self, tau)?;
        Ok(self.transition(&x, &u))
    }

    /// `F(tau) + L * draw` with `L L^T = Sigma_eta`.
    fn sample_step(&self, tau: &DVector<f64>, draw: &DVector<f64>) -> Result<DVector<f64>> {
        if draw.len() != self.state_dim() {
            return Err(PiicError::Dimension(format!(
                "noise draw has length {}, expected {}",
                draw.len(),
                self.state_dim()
            )));
        }
        Ok(self.step_mean(tau)? + &self.process_noise().factor * draw)
    }

    /// Jacobians of `F` at `tau`, analytic when available.
    fn linearize(&self, tau: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let (x, u) = split_tau(self, tau)?;
        let (a, b) = match self.analytic_jacobians(&x, &u) {
            Some(j) => j,
            None => finite_difference_jacobians(self, &x, &u),
        };
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(PiicError::Numerical("non-finite dynamics Jacobian".into()));
        }
        Ok((a, b))
    }
}

fn split_tau<D: Dynamics + ?Sized>(
    model: &D,
    tau: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let nx = model.state_dim();
    let nu = model.control_dim();
    if tau.len() != nx + nu {
        return Err(PiicError::Dimension(format!(
            "state-control vector has length {}, expected {}",
            tau.len(),
            nx + nu
        )));
    }
    if tau.iter().any(|v| !v.is_finite()) {
        return Err(PiicError::Validation(
            "non-finite state-control vector".into(),
        ));
    }
    Ok((tau.rows(0, nx).into_owned(), tau.rows(nx, nu).into_owned()))
}

/// Central-difference Jacobians with step `max(1e-6, 1e-6 * |tau_i|)`.
pub fn finite_difference_jacobians<D: Dynamics + ?Sized>(
    model: &D,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let nx = x.len();
    let nu = u.len();
    let mut a = DMatrix::zeros(nx, nx);
    let mut b = DMatrix::zeros(nx, nu);
    for i in 0..nx {
        let h = (1e-6 * x[i].abs()).max(1e-6);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let col = (model.transition(&xp, u) - model.transition(&xm, u)) / (2.0 * h);
        a.set_column(i, &col);
    }
    for i in 0..nu {
        let h = (1e-6 * u[i].abs()).max(1e-6);
        let mut up = u.clone();
        let mut um = u.clone();
        up[i] += h;
        um[i] -= h;
        let col = (model.transition(x, &up) - model.transition(x, &um)) / (2.0 * h);
        b.set_column(i, &col);
    }
    (a, b)
}

/// Process noise covariance with a precomputed square root for sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessNoise {
    pub cov: DMatrix<f64>,
    /// Any `L` with `L L^T = cov`; exactly zero where `cov` is zero.
    pub factor: DMatrix<f64>,
}

impl ProcessNoise {
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() {
            return Err(PiicError::Dimension("process noise must be square".into()));
        }
        if !crate::gaussian::is_psd(&cov, 1e-10) {
            return Err(PiicError::Validation(
                "process noise covariance must be symmetric PSD".into(),
            ));
        }
        let factor = noise_factor(&cov);
        Ok(Self { cov, factor })
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_row_slice(diag)))
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            cov: DMatrix::zeros(n, n),
            factor: DMatrix::zeros(n, n),
        }
    }
}

fn noise_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let n = cov.nrows();
    let is_diag = (0..n).all(|i| (0..n).all(|j| i == j || cov[(i, j)] == 0.0));
    if is_diag {
        return DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                cov[(i, i)].max(0.0).sqrt()
            } else {
                0.0
            }
        });
    }
    if let Ok(f) = crate::gaussian::cholesky_psd(cov, &[0.0]) {
        return f.l;
    }
    let eig = crate::gaussian::symmetrize(cov).symmetric_eigen();
    let s = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&s) * eig.eigenvectors.transpose()
}
