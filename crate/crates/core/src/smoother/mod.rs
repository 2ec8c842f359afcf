//! E-step engines: Gaussian smoothing of the joint state-control trajectory
//! under the current stochastic policy and the cost likelihood.

mod banded;
mod map;
mod sigma;
mod unscented;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::Basis;
use crate::error::Result;
use crate::gaussian::{clip_eigenvalues, symmetrize};
use crate::objective::ObservationSpec;
use crate::policy::ControllerParams;
use crate::problem::ControlProblem;

pub use banded::{BlockTridiagonal, BlockTridiagonalFactor};
pub use map::{map_objective, smooth_map, GaussNewtonConfig};
pub use sigma::{SigmaPointConfig, SigmaSet};
pub use unscented::smooth_unscented;

/// Smoothed marginals of `(x_t, u_t)` for `t < T` and of `x_T`, plus the
/// expected residual outer products `M_t` for `t = 0..=T`.
#[derive(Debug, Clone)]
pub struct TrajectoryMoments {
    pub tau_mean: Vec<DVector<f64>>,
    pub tau_cov: Vec<DMatrix<f64>>,
    pub terminal_mean: DVector<f64>,
    pub terminal_cov: DMatrix<f64>,
    pub residual_moments: Vec<DMatrix<f64>>,
    pub state_dim: usize,
    /// Set when the MAP solver stopped without meeting its tolerance.
    pub warning: bool,
}

impl TrajectoryMoments {
    pub fn horizon(&self) -> usize {
        self.tau_mean.len()
    }

    pub fn control_dim(&self) -> usize {
        self.tau_mean[0].len() - self.state_dim
    }

    pub fn state_mean(&self, t: usize) -> DVector<f64> {
        if t == self.horizon() {
            self.terminal_mean.clone()
        } else {
            self.tau_mean[t].rows(0, self.state_dim).into_owned()
        }
    }

    pub fn state_cov(&self, t: usize) -> DMatrix<f64> {
        if t == self.horizon() {
            self.terminal_cov.clone()
        } else {
            let n = self.state_dim;
            self.tau_cov[t].view((0, 0), (n, n)).into_owned()
        }
    }

    pub fn control_mean(&self, t: usize) -> DVector<f64> {
        self.tau_mean[t]
            .rows(self.state_dim, self.control_dim())
            .into_owned()
    }

    /// Stacked smoothed state means `x_0..x_T`.
    pub fn state_means(&self) -> Vec<DVector<f64>> {
        (0..=self.horizon()).map(|t| self.state_mean(t)).collect()
    }

    pub fn control_means(&self) -> Vec<DVector<f64>> {
        (0..self.horizon()).map(|t| self.control_mean(t)).collect()
    }

    /// `sum_t Tr(Gamma_t M_t)` over `t = 0..=T`.
    pub fn weighted_residual(&self, spec: &ObservationSpec) -> f64 {
        let t_end = self.horizon();
        self.residual_moments
            .iter()
            .enumerate()
            .map(|(t, m)| {
                let g = if t == t_end {
                    spec.terminal_weight()
                } else {
                    spec.running_weight()
                };
                g.component_mul(m).sum()
            })
            .sum()
    }
}

/// Expected basis products under the smoothed `(x_t, u_t)` marginal.
#[derive(Debug, Clone)]
pub struct BasisMoments {
    /// `E[B B^T]`.
    pub bb: DMatrix<f64>,
    /// `E[B u^T]`.
    pub bu: DMatrix<f64>,
    /// `E[u u^T]`.
    pub uu: DMatrix<f64>,
}

/// Basis moments at time `t`. Closed form for the affine basis, sigma points
/// otherwise.
pub fn basis_moments(
    m: &TrajectoryMoments,
    basis: &dyn Basis,
    t: usize,
    cfg: &SigmaPointConfig,
) -> Result<BasisMoments> {
    let nx = m.state_dim;
    let nu = m.control_dim();
    let mean = &m.tau_mean[t];
    let cov = &m.tau_cov[t];
    if basis.is_affine() {
        let mx = mean.rows(0, nx);
        let mu = mean.rows(nx, nu);
        let mut bb = DMatrix::zeros(nx + 1, nx + 1);
        let mut exx = cov.view((0, 0), (nx, nx)).into_owned();
        exx.ger(1.0, &mx, &mx, 1.0);
        bb.view_mut((0, 0), (nx, nx)).copy_from(&exx);
        bb.view_mut((nx, 0), (1, nx)).copy_from(&mx.transpose());
        bb.view_mut((0, nx), (nx, 1)).copy_from(&mx);
        bb[(nx, nx)] = 1.0;
        let mut bu = DMatrix::zeros(nx + 1, nu);
        let mut exu = cov.view((0, nx), (nx, nu)).into_owned();
        exu.ger(1.0, &mx, &mu, 1.0);
        bu.view_mut((0, 0), (nx, nu)).copy_from(&exu);
        bu.view_mut((nx, 0), (1, nu)).copy_from(&mu.transpose());
        let mut uu = cov.view((nx, nx), (nu, nu)).into_owned();
        uu.ger(1.0, &mu, &mu, 1.0);
        return Ok(BasisMoments {
            bb: symmetrize(&bb),
            bu,
            uu: symmetrize(&uu),
        });
    }
    let sp = cfg.sigma_points(mean, cov)?;
    let g = sp.map(|tau| {
        let b = basis.eval(&tau.as_slice()[..nx]);
        let nb = b.len();
        let mut out = DVector::zeros(nb + nu);
        out.rows_mut(0, nb).copy_from(&b);
        out.rows_mut(nb, nu).copy_from(&tau.rows(nx, nu));
        Ok(out)
    })?;
    // negative central weights can break positivity for non-polynomial maps
    let joint = clip_eigenvalues(&sp.second_moment(&g), 0.0);
    let nb = g[0].len() - nu;
    Ok(BasisMoments {
        bb: joint.view((0, 0), (nb, nb)).into_owned(),
        bu: joint.view((0, nb), (nb, nu)).into_owned(),
        uu: joint.view((nb, nb), (nu, nu)).into_owned(),
    })
}

/// `M_t = E[(z* - h)(z* - h)^T]` for every time step, by sigma points.
pub(crate) fn residual_moments(
    spec: &ObservationSpec,
    tau_mean: &[DVector<f64>],
    tau_cov: &[DMatrix<f64>],
    terminal_mean: &DVector<f64>,
    terminal_cov: &DMatrix<f64>,
    cfg: &SigmaPointConfig,
) -> Result<Vec<DMatrix<f64>>> {
    let mut out = Vec::with_capacity(tau_mean.len() + 1);
    for (t, (m, p)) in tau_mean.iter().zip(tau_cov).enumerate() {
        let sp = cfg.sigma_points(m, p).map_err(|e| e.at_time(t))?;
        let rs = sp.map(|tau| Ok(spec.observe(tau).1))?;
        out.push(clip_eigenvalues(&sp.second_moment(&rs), 0.0));
    }
    let sp = cfg
        .sigma_points(terminal_mean, terminal_cov)
        .map_err(|e| e.at_time(tau_mean.len()))?;
    let rs = sp.map(|x| Ok(spec.observe_terminal(x).1))?;
    out.push(clip_eigenvalues(&sp.second_moment(&rs), 0.0));
    Ok(out)
}

/// E-step backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmootherKind {
    Unscented,
    Map,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmootherOptions {
    pub kind: SmootherKind,
    pub sigma: SigmaPointConfig,
    pub gauss_newton: GaussNewtonConfig,
}

impl Default for SmootherOptions {
    fn default() -> Self {
        Self {
            kind: SmootherKind::Unscented,
            sigma: SigmaPointConfig::default(),
            gauss_newton: GaussNewtonConfig::default(),
        }
    }
}

/// Runs the selected backend; `warm` seeds the MAP solver.
pub fn smooth(
    problem: &ControlProblem,
    params: &ControllerParams,
    alpha: f64,
    opts: &SmootherOptions,
    warm: Option<&TrajectoryMoments>,
) -> Result<TrajectoryMoments> {
    match opts.kind {
        SmootherKind::Unscented => smooth_unscented(problem, params, alpha, &opts.sigma),
        SmootherKind::Map => smooth_map(problem, params, alpha, &opts.gauss_newton, &opts.sigma, warm),
    }
}
