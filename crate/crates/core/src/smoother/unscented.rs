use nalgebra::{DMatrix, DVector};

use super::{residual_moments, SigmaPointConfig, TrajectoryMoments};
use crate::error::{PiicError, Result};
use crate::gaussian::{cholesky_default, psd_sqrt_rows, symmetrize};
use crate::policy::ControllerParams;
use crate::problem::ControlProblem;

struct Forward {
    /// Filtered `(x_t, u_t)` after the cost update at `t`.
    tau_mean: DVector<f64>,
    tau_cov: DMatrix<f64>,
    /// Predicted `x_{t+1}` and `Cov(tau_t, x_{t+1})`.
    pred_mean: DVector<f64>,
    pred_cov: DMatrix<f64>,
    cross: DMatrix<f64>,
}

/// Unscented forward filter over `(x_t, u_t)` followed by an RTS backward
/// pass. One forward-backward sweep per call.
pub fn smooth_unscented(
    problem: &ControlProblem,
    params: &ControllerParams,
    alpha: f64,
    cfg: &SigmaPointConfig,
) -> Result<TrajectoryMoments> {
    check_inputs(problem, params, alpha)?;
    let nx = problem.state_dim();
    let spec = &problem.observation;
    let model = &problem.dynamics;
    let w_run = psd_sqrt_rows(spec.running_weight());
    let w_term = psd_sqrt_rows(spec.terminal_weight());
    let y_run = &w_run * spec.running_target();
    let y_term = &w_term * spec.terminal_target();
    let noise = &model.process_noise().cov;

    let mut mx = problem.x0_mean.clone();
    let mut px = problem.x0_cov.clone();
    let mut passes: Vec<Forward> = Vec::with_capacity(problem.horizon);
    for t in 0..problem.horizon {
        let step = || -> Result<Forward> {
            let (m, p) = policy_joint(params, t, &mx, &px, cfg)?;
            let (m, p) = cost_update(&m, &p, &w_run, &y_run, alpha, cfg, |tau| {
                let (x, u) = tau.as_slice().split_at(nx);
                spec.h_running(x, u)
            })?;
            let sp = cfg.sigma_points(&m, &p)?;
            let ys = sp.map(|tau| model.step_mean(tau))?;
            let pm = sp.mean(&ys);
            let pc = symmetrize(&(sp.cov(&ys, &pm) + noise));
            let cross = sp.cross(&sp.points, &m, &ys, &pm);
            Ok(Forward {
                tau_mean: m,
                tau_cov: p,
                pred_mean: pm,
                pred_cov: pc,
                cross,
            })
        };
        let f = step().map_err(|e| e.at_time(t))?;
        mx = f.pred_mean.clone();
        px = f.pred_cov.clone();
        passes.push(f);
    }
    let t_end = problem.horizon;
    let (term_mean, term_cov) = cost_update(&mx, &px, &w_term, &y_term, alpha, cfg, |x| {
        spec.h_terminal(x.as_slice())
    })
    .map_err(|e| e.at_time(t_end))?;

    let mut tau_mean = vec![DVector::zeros(0); t_end];
    let mut tau_cov = vec![DMatrix::zeros(0, 0); t_end];
    let mut next_mean = term_mean.clone();
    let mut next_cov = term_cov.clone();
    for t in (0..t_end).rev() {
        let f = &passes[t];
        let factor = cholesky_default(&f.pred_cov).map_err(|e| e.at_time(t))?;
        let gain = factor.solve(&f.cross.transpose()).transpose();
        let m = &f.tau_mean + &gain * (&next_mean - &f.pred_mean);
        let p = symmetrize(&(&f.tau_cov + &gain * (&next_cov - &f.pred_cov) * gain.transpose()));
        next_mean = m.rows(0, nx).into_owned();
        next_cov = p.view((0, 0), (nx, nx)).into_owned();
        tau_mean[t] = m;
        tau_cov[t] = p;
    }

    let residual_moments =
        residual_moments(spec, &tau_mean, &tau_cov, &term_mean, &term_cov, cfg)?;
    Ok(TrajectoryMoments {
        tau_mean,
        tau_cov,
        terminal_mean: term_mean,
        terminal_cov: term_cov,
        residual_moments,
        state_dim: nx,
        warning: false,
    })
}

pub(crate) fn check_inputs(
    problem: &ControlProblem,
    params: &ControllerParams,
    alpha: f64,
) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(PiicError::Validation(format!(
            "observation precision scale must be positive, got {alpha}"
        )));
    }
    if params.horizon() != problem.horizon {
        return Err(PiicError::Dimension(format!(
            "controller horizon {} differs from problem horizon {}",
            params.horizon(),
            problem.horizon
        )));
    }
    let nb = params.basis.dim(problem.state_dim());
    if params.basis_dim() != nb || params.control_dim() != problem.control_dim() {
        return Err(PiicError::Dimension(format!(
            "gains are {}x{} but basis/control dimensions are {nb}x{}",
            params.basis_dim(),
            params.control_dim(),
            problem.control_dim()
        )));
    }
    Ok(())
}

/// Joint Gaussian of `(x, u)` with `u = Theta^T B(x) + delta`.
fn policy_joint(
    params: &ControllerParams,
    t: usize,
    mx: &DVector<f64>,
    px: &DMatrix<f64>,
    cfg: &SigmaPointConfig,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let nx = mx.len();
    let sp = cfg.sigma_points(mx, px)?;
    let us = sp.map(|x| Ok(params.mean_control(t, x.as_slice())))?;
    let mu = sp.mean(&us);
    let puu = sp.cov(&us, &mu) + &params.noise[t];
    let pxu = sp.cross(&sp.points, mx, &us, &mu);
    let nu = mu.len();
    let mut m = DVector::zeros(nx + nu);
    m.rows_mut(0, nx).copy_from(mx);
    m.rows_mut(nx, nu).copy_from(&mu);
    let mut p = DMatrix::zeros(nx + nu, nx + nu);
    p.view_mut((0, 0), (nx, nx)).copy_from(px);
    p.view_mut((0, nx), (nx, nu)).copy_from(&pxu);
    p.view_mut((nx, 0), (nu, nx)).copy_from(&pxu.transpose());
    p.view_mut((nx, nx), (nu, nu)).copy_from(&puu);
    Ok((m, symmetrize(&p)))
}

/// Sigma-point update with the whitened pseudo-measurement
/// `W z* = W h(v) + e`, `e ~ N(0, alpha^{-1} I)`, `W^T W = Gamma`.
fn cost_update<H>(
    m: &DVector<f64>,
    p: &DMatrix<f64>,
    w: &DMatrix<f64>,
    target: &DVector<f64>,
    alpha: f64,
    cfg: &SigmaPointConfig,
    h: H,
) -> Result<(DVector<f64>, DMatrix<f64>)>
where
    H: Fn(&DVector<f64>) -> DVector<f64>,
{
    if w.nrows() == 0 {
        return Ok((m.clone(), p.clone()));
    }
    let sp = cfg.sigma_points(m, p)?;
    let ys = sp.map(|v| Ok(w * h(v)))?;
    let ym = sp.mean(&ys);
    let r = ys[0].len();
    let s = sp.cov(&ys, &ym) + DMatrix::identity(r, r) / alpha;
    let c = sp.cross(&sp.points, m, &ys, &ym);
    let factor = cholesky_default(&s)?;
    let gain = factor.solve(&c.transpose()).transpose();
    let mean = m + &gain * (target - ym);
    let cov = symmetrize(&(p - &gain * c.transpose()));
    Ok((mean, cov))
}
