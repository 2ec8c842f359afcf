//! Expectation-maximization over the controller parameters.
//!
//! The E-step is one smoother call. The M-step maximizes
//!
//! `L = sum_t [-1/2 log|2 pi Sigma_t| - 1/2 Tr(Sigma_t^{-1} S_t(Theta_t))]
//!      + N/2 log(alpha) - alpha/2 sum_t Tr(Gamma_t M_t)`
//!
//! with `S_t(Theta) = E[(u - Theta^T B)(u - Theta^T B)^T]` and
//! `N = (T - 1) n_z + n_zT`, in closed form.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};

use crate::error::{PiicError, Result};
use crate::gaussian::{cholesky_default, clip_eigenvalues, symmetrize};
use crate::objective::ObservationSpec;
use crate::policy::{ControllerParams, SIGMA_DELTA_FLOOR};
use crate::problem::ControlProblem;
use crate::smoother::{basis_moments, smooth, BasisMoments, SmootherOptions, TrajectoryMoments};
use crate::structure::StructureMask;

/// Smallest denominator accepted by the alpha update.
pub const ALPHA_DENOMINATOR_FLOOR: f64 = 1e-12;

fn ridge_term(bb: &DMatrix<f64>, ridge: f64) -> f64 {
    if ridge == 0.0 {
        0.0
    } else {
        ridge * bb.trace().abs() / bb.nrows() as f64
    }
}

fn normal_solve(
    bb: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    ridge: f64,
    t: usize,
    p: Option<usize>,
) -> Result<DMatrix<f64>> {
    let mut a = symmetrize(bb);
    let r = ridge_term(bb, ridge);
    for i in 0..a.nrows() {
        a[(i, i)] += r;
    }
    let f = cholesky_default(&a).map_err(|e| PiicError::MStep {
        t,
        coordinate: p,
        message: format!("singular normal matrix: {e}"),
    })?;
    Ok(f.solve(rhs))
}

/// `Theta_t = (E[B B^T] + ridge)^{-1} E[B u^T]` for every `t`.
pub fn update_theta_tv(moments: &[BasisMoments], ridge: f64) -> Result<Vec<DMatrix<f64>>> {
    moments
        .iter()
        .enumerate()
        .map(|(t, m)| normal_solve(&m.bb, &m.bu, ridge, t, None))
        .collect()
}

/// Shared `Theta = (sum_t E[B B^T] + ridge)^{-1} sum_t E[B u^T]`.
pub fn update_theta_ti(moments: &[BasisMoments], ridge: f64) -> Result<DMatrix<f64>> {
    let (bb, bu) = summed(moments);
    normal_solve(&bb, &bu, ridge, 0, None)
}

fn summed(moments: &[BasisMoments]) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut bb = DMatrix::zeros(moments[0].bb.nrows(), moments[0].bb.ncols());
    let mut bu = DMatrix::zeros(moments[0].bu.nrows(), moments[0].bu.ncols());
    for m in moments {
        bb += &m.bb;
        bu += &m.bu;
    }
    (bb, bu)
}

/// Column-wise reduced regressions; excluded entries are exactly zero.
/// Returns one matrix per time step (all equal when `time_invariant`).
pub fn update_theta_structured(
    moments: &[BasisMoments],
    mask: &StructureMask,
    ridge: f64,
    time_invariant: bool,
) -> Result<Vec<DMatrix<f64>>> {
    let nb = moments[0].bb.nrows();
    let nu = moments[0].bu.ncols();
    if mask.basis_dim() != nb || mask.control_dim() != nu {
        return Err(PiicError::Dimension(format!(
            "mask is {}x{} but moments are {nb}x{nu}",
            mask.basis_dim(),
            mask.control_dim()
        )));
    }
    let solve_one = |bb: &DMatrix<f64>, bu: &DMatrix<f64>, t: usize| -> Result<DMatrix<f64>> {
        let mut theta = DMatrix::zeros(nb, nu);
        for p in 0..nu {
            let bb_p = mask.reduce_square(p, bb);
            let bu_p = mask.reduce(p, &bu.column(p).into_owned());
            let sol = normal_solve(&bb_p, &DMatrix::from_column_slice(bu_p.len(), 1, bu_p.as_slice()), ridge, t, Some(p))?;
            theta
                .set_column(p, &mask.embed(p, &DVector::from_column_slice(sol.as_slice())));
        }
        Ok(theta)
    };
    if time_invariant {
        let (bb, bu) = summed(moments);
        let theta = solve_one(&bb, &bu, 0)?;
        Ok(vec![theta; moments.len()])
    } else {
        moments
            .iter()
            .enumerate()
            .map(|(t, m)| solve_one(&m.bb, &m.bu, t))
            .collect()
    }
}

/// `S(Theta) = E[u u^T] - Theta^T E[B u^T] - E[u B^T] Theta + Theta^T E[B B^T] Theta`.
pub fn residual_covariance(m: &BasisMoments, theta: &DMatrix<f64>) -> DMatrix<f64> {
    let tb = theta.tr_mul(&m.bu);
    symmetrize(&(&m.uu - &tb - tb.transpose() + theta.tr_mul(&(&m.bb * theta))))
}

/// Controller noise update given the new gains. Diagonal in structured
/// mode, shared across time when `time_invariant`; floored at
/// `SIGMA_DELTA_FLOOR`.
pub fn update_sigma_delta(
    moments: &[BasisMoments],
    gains: &[DMatrix<f64>],
    structured: bool,
    time_invariant: bool,
) -> Result<Vec<DMatrix<f64>>> {
    let mut s: Vec<DMatrix<f64>> = moments
        .iter()
        .zip(gains)
        .map(|(m, th)| residual_covariance(m, th))
        .collect();
    for (t, st) in s.iter().enumerate() {
        let scale = st.diagonal().amax().max(1.0);
        if let Some(p) = (0..st.nrows()).find(|&p| st[(p, p)] < -1e-10 * scale) {
            return Err(PiicError::MStep {
                t,
                coordinate: Some(p),
                message: format!("negative controller variance {:e}", st[(p, p)]),
            });
        }
    }
    if time_invariant {
        let mut avg = DMatrix::zeros(s[0].nrows(), s[0].ncols());
        for st in &s {
            avg += st;
        }
        avg /= s.len() as f64;
        s = vec![avg; moments.len()];
    }
    Ok(s
        .into_iter()
        .map(|st| {
            if structured {
                DMatrix::from_diagonal(&st.diagonal().map(|v| v.max(SIGMA_DELTA_FLOOR)))
            } else {
                clip_eigenvalues(&st, SIGMA_DELTA_FLOOR)
            }
        })
        .collect())
}

/// `(T - 1) n_z + n_zT`.
pub fn alpha_numerator(spec: &ObservationSpec, horizon: usize) -> f64 {
    (horizon as f64 - 1.0) * spec.running_dim() as f64 + spec.terminal_dim() as f64
}

/// Closed-form scale update; returns `None` when the weighted residual is
/// too small to define it.
pub fn update_alpha(moments: &TrajectoryMoments, spec: &ObservationSpec) -> Result<Option<f64>> {
    let den = moments.weighted_residual(spec);
    if den < -1e-10 {
        return Err(PiicError::MStep {
            t: moments.horizon(),
            coordinate: None,
            message: format!("negative weighted residual {den:e}"),
        });
    }
    if den < ALPHA_DENOMINATOR_FLOOR {
        return Ok(None);
    }
    Ok(Some(alpha_numerator(spec, moments.horizon()) / den))
}

/// M-step surrogate value (terms that depend on the parameters only).
pub fn surrogate(
    basis: &[BasisMoments],
    gains: &[DMatrix<f64>],
    noise: &[DMatrix<f64>],
    alpha: f64,
    weighted_residual: f64,
    numerator: f64,
) -> Result<f64> {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut l = 0.0;
    for (t, ((m, th), sig)) in basis.iter().zip(gains).zip(noise).enumerate() {
        let f = cholesky_default(sig).map_err(|e| e.at_time(t))?;
        let n = sig.nrows() as f64;
        let s = residual_covariance(m, th);
        l += -0.5 * (n * two_pi.ln() + f.log_det()) - 0.5 * f.solve(&s).trace();
    }
    Ok(l + 0.5 * numerator * alpha.ln() - 0.5 * alpha * weighted_residual)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub smoother: SmootherOptions,
    pub max_iterations: usize,
    /// Infinity-norm threshold on the change of smoothed state means.
    pub tolerance: f64,
    pub ridge: f64,
    pub initial_alpha: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            smoother: SmootherOptions::default(),
            max_iterations: 100,
            tolerance: 1e-3,
            ridge: 1e-9,
            initial_alpha: 1.0,
        }
    }
}

/// One row of the iteration log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub alpha: f64,
    /// Surrogate at the parameters that produced this E-step.
    pub surrogate_before: f64,
    /// Surrogate after the M-step, under the same smoothed moments.
    pub surrogate_after: f64,
    /// Infinity-norm change of the smoothed state means (NaN on the first).
    pub state_change: f64,
    /// Cost of the smoothed mean trajectory.
    pub mean_cost: f64,
    pub smoother_warning: bool,
}

#[derive(Debug, Clone)]
pub struct PiicResult {
    pub params: ControllerParams,
    pub alpha: f64,
    pub moments: TrajectoryMoments,
    pub log: Vec<IterationRecord>,
    pub converged: bool,
}

fn max_abs_change(a: &[DVector<f64>], b: &[DVector<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).amax())
        .fold(0.0, f64::max)
}

/// One closed-form M-step. Returns the new gains and noise.
pub fn m_step(
    moments: &[BasisMoments],
    params: &ControllerParams,
    ridge: f64,
) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
    let structured = params.is_structured();
    let gains = match (&params.mask, structured) {
        (Some(mask), true) => {
            update_theta_structured(moments, mask, ridge, params.time_invariant)?
        }
        _ if params.time_invariant => vec![update_theta_ti(moments, ridge)?; moments.len()],
        _ => update_theta_tv(moments, ridge)?,
    };
    let noise = update_sigma_delta(moments, &gains, structured, params.time_invariant)?;
    Ok((gains, noise))
}

/// Alternates smoothing and closed-form parameter updates until the
/// smoothed state means stop moving.
pub fn run_piic(
    problem: &ControlProblem,
    init: ControllerParams,
    opts: &EmOptions,
) -> Result<PiicResult> {
    run_piic_observed(problem, init, opts, |_, _| {})
}

/// [`run_piic`] that hands the parameters produced by every M-step to
/// `observe` together with the iteration number.
pub fn run_piic_observed(
    problem: &ControlProblem,
    init: ControllerParams,
    opts: &EmOptions,
    mut observe: impl FnMut(usize, &ControllerParams),
) -> Result<PiicResult> {
    if let Some(mask) = &init.mask {
        if init.gains.iter().any(|g| !mask.is_respected_by(g)) {
            return Err(PiicError::Validation(
                "initial gains violate the structure mask".into(),
            ));
        }
    }
    if !(opts.initial_alpha > 0.0) {
        return Err(PiicError::Validation("initial alpha must be positive".into()));
    }
    let spec = &problem.observation;
    let numerator = alpha_numerator(spec, problem.horizon);
    let mut params = init;
    let mut alpha = opts.initial_alpha;
    let mut log: Vec<IterationRecord> = Vec::new();
    let mut prev_states: Option<Vec<DVector<f64>>> = None;
    let mut warm: Option<TrajectoryMoments> = None;
    let mut best: Option<(f64, ControllerParams, f64, TrajectoryMoments)> = None;

    for k in 1..=opts.max_iterations {
        let wrap = |e: PiicError| PiicError::Iteration {
            iteration: k,
            source: Box::new(e),
        };
        let moments = smooth(problem, &params, alpha, &opts.smoother, warm.as_ref()).map_err(wrap)?;
        let bm: Vec<BasisMoments> = (0..problem.horizon)
            .map(|t| basis_moments(&moments, params.basis.as_ref(), t, &opts.smoother.sigma))
            .collect::<Result<_>>()
            .map_err(wrap)?;
        let wres = moments.weighted_residual(spec);
        let before = surrogate(&bm, &params.gains, &params.noise, alpha, wres, numerator).map_err(wrap)?;

        let (gains, noise) = m_step(&bm, &params, opts.ridge).map_err(wrap)?;
        let new_alpha = match update_alpha(&moments, spec).map_err(wrap)? {
            Some(a) => a,
            None => {
                warn!("iteration {k}: weighted residual vanished, keeping alpha = {alpha}");
                alpha
            }
        };
        let after = surrogate(&bm, &gains, &noise, new_alpha, wres, numerator).map_err(wrap)?;

        let states = moments.state_means();
        let change = prev_states
            .as_ref()
            .map(|p| max_abs_change(p, &states))
            .unwrap_or(f64::NAN);
        let mean_cost = spec.trajectory_cost(&states, &moments.control_means());
        debug!(
            "iteration {k}: alpha {new_alpha:.4e}, surrogate {before:.6e} -> {after:.6e}, change {change:.3e}, cost {mean_cost:.4}"
        );
        log.push(IterationRecord {
            iteration: k,
            alpha: new_alpha,
            surrogate_before: before,
            surrogate_after: after,
            state_change: change,
            mean_cost,
            smoother_warning: moments.warning,
        });

        params.gains = gains;
        params.noise = noise;
        alpha = new_alpha;
        observe(k, &params);
        if best.as_ref().map(|b| after > b.0).unwrap_or(true) {
            best = Some((after, params.clone(), alpha, moments.clone()));
        }
        if change < opts.tolerance {
            return Ok(PiicResult {
                params,
                alpha,
                moments,
                log,
                converged: true,
            });
        }
        prev_states = Some(states);
        warm = Some(moments);
    }
    let (_, params, alpha, moments) = best.expect("at least one iteration ran");
    warn!(
        "EM did not converge in {} iterations; returning the best surrogate iterate",
        opts.max_iterations
    );
    Ok(PiicResult {
        params,
        alpha,
        moments,
        log,
        converged: false,
    })
}
