use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::banded::BlockTridiagonal;
use super::unscented::check_inputs;
use super::{residual_moments, SigmaPointConfig, TrajectoryMoments};
use crate::error::{PiicError, Result};
use crate::gaussian::{cholesky_default, clip_eigenvalues};
use crate::policy::{ControllerParams, SIGMA_DELTA_FLOOR};
use crate::problem::ControlProblem;

/// Levenberg-Marquardt settings for the trajectory least-squares problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussNewtonConfig {
    pub max_iterations: usize,
    pub initial_damping: f64,
    /// Relative cost decrease below which iterations stop.
    pub tolerance: f64,
    /// Added to the process noise before inversion.
    pub dynamics_noise_floor: f64,
}

impl Default for GaussNewtonConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            initial_damping: 1e-4,
            tolerance: 1e-9,
            dynamics_noise_floor: 1e-12,
        }
    }
}

const MAX_DAMPING: f64 = 1e12;

/// Precisions of every factor in the trajectory objective.
struct Factors<'a> {
    problem: &'a ControlProblem,
    params: &'a ControllerParams,
    prior: DMatrix<f64>,
    policy: Vec<DMatrix<f64>>,
    dynamics: DMatrix<f64>,
    running: DMatrix<f64>,
    terminal: DMatrix<f64>,
}

impl<'a> Factors<'a> {
    fn new(
        problem: &'a ControlProblem,
        params: &'a ControllerParams,
        alpha: f64,
        cfg: &GaussNewtonConfig,
    ) -> Result<Self> {
        let inv = |m: &DMatrix<f64>, floor: f64| -> Result<DMatrix<f64>> {
            Ok(cholesky_default(&clip_eigenvalues(m, floor))?.inverse())
        };
        let x0_floor = 1e-12 * problem.x0_cov.diagonal().amax().max(1.0);
        Ok(Self {
            problem,
            params,
            prior: inv(&problem.x0_cov, x0_floor)?,
            policy: params
                .noise
                .iter()
                .map(|s| inv(s, SIGMA_DELTA_FLOOR))
                .collect::<Result<_>>()?,
            dynamics: inv(
                &problem.dynamics.process_noise().cov,
                cfg.dynamics_noise_floor,
            )?,
            running: problem.observation.running_weight() * alpha,
            terminal: problem.observation.terminal_weight() * alpha,
        })
    }

    fn quad(r: &DVector<f64>, w: &DMatrix<f64>) -> f64 {
        0.5 * r.dot(&(w * r))
    }

    /// `1/2 sum r^T W r` over all factors.
    fn cost(&self, traj: &[DVector<f64>]) -> Result<f64> {
        let p = self.problem;
        let nx = p.state_dim();
        let t_end = p.horizon;
        let spec = &p.observation;
        let mut c = Self::quad(&(traj[0].rows(0, nx) - &p.x0_mean), &self.prior);
        for t in 0..t_end {
            let tau = &traj[t];
            let (x, u) = tau.as_slice().split_at(nx);
            let rp = DVector::from_column_slice(u) - self.params.mean_control(t, x);
            c += Self::quad(&rp, &self.policy[t]);
            let rd = traj[t + 1].rows(0, nx) - p.dynamics.step_mean(tau)?;
            c += Self::quad(&rd, &self.dynamics);
            c += Self::quad(&spec.observe(tau).1, &self.running);
        }
        c += Self::quad(&spec.observe_terminal(&traj[t_end]).1, &self.terminal);
        Ok(c)
    }

    /// Gauss-Newton information matrix and gradient at `traj`.
    fn linearize(&self, traj: &[DVector<f64>]) -> Result<(BlockTridiagonal, Vec<DVector<f64>>)> {
        let p = self.problem;
        let nx = p.state_dim();
        let nu = p.control_dim();
        let nt = nx + nu;
        let t_end = p.horizon;
        let spec = &p.observation;
        let mut sizes = vec![nt; t_end];
        sizes.push(nx);
        let mut h = BlockTridiagonal::zeros(&sizes);
        let mut g: Vec<DVector<f64>> = sizes.iter().map(|&n| DVector::zeros(n)).collect();

        // prior on x_0
        let r = traj[0].rows(0, nx) - &p.x0_mean;
        let mut d0 = h.diag[0].view_mut((0, 0), (nx, nx));
        d0 += &self.prior;
        let mut g0 = g[0].rows_mut(0, nx);
        g0 += &self.prior * r;
        for t in 0..t_end {
            let tau = &traj[t];
            let (x, u) = tau.as_slice().split_at(nx);

            // policy: r = u - Theta^T B(x)
            let r = DVector::from_column_slice(u) - self.params.mean_control(t, x);
            let mut j = DMatrix::zeros(nu, nt);
            j.view_mut((0, 0), (nu, nx))
                .copy_from(&(-self.params.mean_control_jacobian(t, x)));
            j.view_mut((0, nx), (nu, nu)).fill_with_identity();
            accumulate(&mut h.diag[t], &mut g[t], &j, &self.policy[t], &r);

            // dynamics: r = x_{t+1} - F(tau_t)
            let (a, b) = p.dynamics.linearize(tau).map_err(|e| e.at_time(t))?;
            let r = traj[t + 1].rows(0, nx) - p.dynamics.step_mean(tau)?;
            let mut jt = DMatrix::zeros(nx, nt);
            jt.view_mut((0, 0), (nx, nx)).copy_from(&(-a));
            jt.view_mut((0, nx), (nx, nu)).copy_from(&(-b));
            let wr = &self.dynamics * &r;
            let wj = &self.dynamics * &jt;
            h.diag[t] += jt.tr_mul(&wj);
            g[t] += jt.tr_mul(&wr);
            // d r / d x_{t+1} = [I 0]
            let mut d_next = h.diag[t + 1].view_mut((0, 0), (nx, nx));
            d_next += &self.dynamics;
            let mut g_next = g[t + 1].rows_mut(0, nx);
            g_next += &wr;
            let mut e = h.lower[t].view_mut((0, 0), (nx, nt));
            e += &wj;

            // cost observation: r = z* - h(tau)
            let r = spec.observe(tau).1;
            let j = -spec.h_running_jacobian(x, u);
            accumulate(&mut h.diag[t], &mut g[t], &j, &self.running, &r);
        }
        let r = spec.observe_terminal(&traj[t_end]).1;
        let j = -spec.h_terminal_jacobian(traj[t_end].as_slice());
        accumulate(&mut h.diag[t_end], &mut g[t_end], &j, &self.terminal, &r);
        Ok((h, g))
    }
}

fn accumulate(
    h: &mut DMatrix<f64>,
    g: &mut DVector<f64>,
    j: &DMatrix<f64>,
    w: &DMatrix<f64>,
    r: &DVector<f64>,
) {
    let wj = w * j;
    *h += j.tr_mul(&wj);
    *g += wj.tr_mul(r);
}

/// Policy-mean rollout from the initial mean, used as a cold start.
fn open_loop(problem: &ControlProblem, params: &ControllerParams) -> Result<Vec<DVector<f64>>> {
    let nx = problem.state_dim();
    let nu = problem.control_dim();
    let mut x = problem.x0_mean.clone();
    let mut out = Vec::with_capacity(problem.horizon + 1);
    for t in 0..problem.horizon {
        let u = params.mean_control(t, x.as_slice());
        let mut tau = DVector::zeros(nx + nu);
        tau.rows_mut(0, nx).copy_from(&x);
        tau.rows_mut(nx, nu).copy_from(&u);
        let next = problem.dynamics.step_mean(&tau).map_err(|e| e.at_time(t))?;
        out.push(tau);
        x = next;
    }
    out.push(x);
    Ok(out)
}

fn warm_start(problem: &ControlProblem, warm: Option<&TrajectoryMoments>) -> Option<Vec<DVector<f64>>> {
    let m = warm?;
    if m.horizon() != problem.horizon
        || m.state_dim != problem.state_dim()
        || m.tau_mean[0].len() != problem.tau_dim()
    {
        return None;
    }
    let mut out = m.tau_mean.clone();
    out.push(m.terminal_mean.clone());
    Some(out)
}

/// Objective `1/2 sum r^T W r` of a trajectory
/// `[tau_0, ..., tau_{T-1}, x_T]` under the MAP factor weights.
pub fn map_objective(
    problem: &ControlProblem,
    params: &ControllerParams,
    alpha: f64,
    cfg: &GaussNewtonConfig,
    traj: &[DVector<f64>],
) -> Result<f64> {
    check_inputs(problem, params, alpha)?;
    Factors::new(problem, params, alpha, cfg)?.cost(traj)
}

/// MAP trajectory by Levenberg-Marquardt with Laplace marginals from the
/// block-tridiagonal information matrix.
pub fn smooth_map(
    problem: &ControlProblem,
    params: &ControllerParams,
    alpha: f64,
    cfg: &GaussNewtonConfig,
    sigma: &SigmaPointConfig,
    warm: Option<&TrajectoryMoments>,
) -> Result<TrajectoryMoments> {
    check_inputs(problem, params, alpha)?;
    let factors = Factors::new(problem, params, alpha, cfg)?;
    let mut traj = match warm_start(problem, warm) {
        Some(t) => t,
        None => open_loop(problem, params)?,
    };
    let mut cost = factors.cost(&traj)?;
    if !cost.is_finite() {
        traj = open_loop(problem, params)?;
        cost = factors.cost(&traj)?;
    }
    let mut lambda = cfg.initial_damping;
    let mut converged = false;
    let mut exhausted = false;

    let try_step = |traj: &[DVector<f64>],
                    h: &BlockTridiagonal,
                    g: &[DVector<f64>],
                    lambda: f64|
     -> Option<(Vec<DVector<f64>>, f64)> {
        let system = if lambda > 0.0 { h.damped(lambda) } else { h.clone() };
        let factor = system.factor().ok()?;
        let neg: Vec<DVector<f64>> = g.iter().map(|v| -v).collect();
        let step = factor.solve(&neg);
        let cand: Vec<DVector<f64>> = traj.iter().zip(&step).map(|(a, b)| a + b).collect();
        let c = factors.cost(&cand).ok()?;
        c.is_finite().then_some((cand, c))
    };

    for _ in 0..cfg.max_iterations {
        let (h, g) = factors.linearize(&traj)?;
        let mut accepted = None;
        while lambda <= MAX_DAMPING {
            match try_step(&traj, &h, &g, lambda) {
                Some((cand, c)) if c <= cost => {
                    accepted = Some((cand, c));
                    lambda = (lambda / 10.0).max(1e-15);
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        let Some((cand, c)) = accepted else {
            exhausted = true;
            break;
        };
        let decrease = (cost - c) / cost.abs().max(f64::MIN_POSITIVE);
        traj = cand;
        cost = c;
        if decrease < cfg.tolerance {
            converged = true;
            break;
        }
    }
    // closing undamped Gauss-Newton step
    let (h, g) = factors.linearize(&traj)?;
    if let Some((cand, c)) = try_step(&traj, &h, &g, 0.0) {
        if c <= cost {
            traj = cand;
        }
    }
    if !converged {
        warn!(
            "MAP smoother stopped without reaching tolerance ({})",
            if exhausted { "damping exhausted" } else { "iteration budget" }
        );
    }

    let (h, _) = factors.linearize(&traj)?;
    let covs = h
        .factor()
        .map_err(|e| match e {
            PiicError::EStep { .. } => e,
            other => other.at_time(0),
        })?
        .marginal_covariances();
    let t_end = problem.horizon;
    let terminal_mean = traj.pop().expect("trajectory has a terminal block");
    let mut tau_cov = covs;
    let terminal_cov = tau_cov.pop().expect("covariance has a terminal block");
    let residual_moments = residual_moments(
        &problem.observation,
        &traj,
        &tau_cov,
        &terminal_mean,
        &terminal_cov,
        sigma,
    )?;
    debug_assert_eq!(traj.len(), t_end);
    Ok(TrajectoryMoments {
        tau_mean: traj,
        tau_cov,
        terminal_mean,
        terminal_cov,
        residual_moments,
        state_dim: problem.state_dim(),
        warning: !converged,
    })
}
