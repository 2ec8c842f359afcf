//! Iterative LQG baseline on the same barrier-augmented cost.
//!
//! The stage cost `r^T Gamma r` with `r = z* - h(tau)` is quadratized by
//! Gauss-Newton: gradient `-2 J^T Gamma r`, Hessian `2 J^T Gamma J`.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};

use crate::error::{PiicError, Result};
use crate::gaussian::{cholesky_psd, symmetrize};
use crate::problem::ControlProblem;

#[derive(Debug, Clone, PartialEq)]
pub struct IlqgOptions {
    pub max_iterations: usize,
    /// Relative cost decrease below which iterations stop.
    pub tolerance: f64,
    /// `lambda` values tried on `Q_uu` in order.
    pub regularization: Vec<f64>,
    /// Feedforward step sizes tried in order.
    pub line_search: Vec<f64>,
}

impl Default for IlqgOptions {
    fn default() -> Self {
        let mut regularization = vec![0.0];
        regularization.extend((-6..=2).map(|e| 10f64.powi(e)));
        Self {
            max_iterations: 200,
            tolerance: 1e-9,
            regularization,
            line_search: (0..12).map(|i| 0.5f64.powi(i)).collect(),
        }
    }
}

/// `u_t = K_t x_t + k_t`, with the nominal trajectory it was built around.
#[derive(Debug, Clone)]
pub struct AffinePolicy {
    pub gains: Vec<DMatrix<f64>>,
    pub offsets: Vec<DVector<f64>>,
    pub nominal_states: Vec<DVector<f64>>,
    pub nominal_controls: Vec<DVector<f64>>,
}

impl AffinePolicy {
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    pub fn control(&self, t: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.gains[t] * x + &self.offsets[t]
    }
}

#[derive(Debug, Clone)]
pub struct IlqgResult {
    pub policy: AffinePolicy,
    /// Nominal cost after each accepted iteration, starting with the initial rollout.
    pub cost_history: Vec<f64>,
    pub converged: bool,
}

struct Sweep {
    gains: Vec<DMatrix<f64>>,
    feedforward: Vec<DVector<f64>>,
}

fn stack(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut tau = DVector::zeros(x.len() + u.len());
    tau.rows_mut(0, x.len()).copy_from(x);
    tau.rows_mut(x.len(), u.len()).copy_from(u);
    tau
}

fn nominal_cost(problem: &ControlProblem, xs: &[DVector<f64>], us: &[DVector<f64>]) -> f64 {
    problem.observation.trajectory_cost(xs, us)
}

fn rollout_nominal(
    problem: &ControlProblem,
    us: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let mut xs = Vec::with_capacity(us.len() + 1);
    xs.push(problem.x0_mean.clone());
    for (t, u) in us.iter().enumerate() {
        let next = problem.dynamics.step_mean(&stack(&xs[t], u))?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(PiicError::Divergence { step: t });
        }
        xs.push(next);
    }
    Ok(xs)
}

fn backward(
    problem: &ControlProblem,
    xs: &[DVector<f64>],
    us: &[DVector<f64>],
    lambda: f64,
) -> Result<Option<Sweep>> {
    let spec = &problem.observation;
    let nx = problem.state_dim();
    let nu = problem.control_dim();
    let t_end = problem.horizon;

    let x_t = xs[t_end].as_slice();
    let (_, r) = spec.observe_terminal(&xs[t_end]);
    let j = spec.h_terminal_jacobian(x_t);
    let gj = spec.terminal_weight() * &j;
    let mut vx = -2.0 * gj.tr_mul(&r);
    let mut vxx = 2.0 * j.tr_mul(&gj);

    let mut gains = vec![DMatrix::zeros(nu, nx); t_end];
    let mut feedforward = vec![DVector::zeros(nu); t_end];
    for t in (0..t_end).rev() {
        let tau = stack(&xs[t], &us[t]);
        let (a, b) = problem.dynamics.linearize(&tau)?;
        let (_, r) = spec.observe(&tau);
        let j = spec.h_running_jacobian(xs[t].as_slice(), us[t].as_slice());
        let gj = spec.running_weight() * &j;
        let l = -2.0 * gj.tr_mul(&r);
        let ll = 2.0 * j.tr_mul(&gj);

        let qx = l.rows(0, nx) + a.tr_mul(&vx);
        let qu = l.rows(nx, nu) + b.tr_mul(&vx);
        let vxx_a = &vxx * &a;
        let vxx_b = &vxx * &b;
        let qxx = ll.view((0, 0), (nx, nx)) + a.tr_mul(&vxx_a);
        let quu = ll.view((nx, nx), (nu, nu)) + b.tr_mul(&vxx_b);
        let qux = ll.view((nx, 0), (nu, nx)) + b.tr_mul(&vxx_a);

        let mut quu_reg = symmetrize(&quu);
        for i in 0..nu {
            quu_reg[(i, i)] += lambda;
        }
        let Ok(f) = cholesky_psd(&quu_reg, &[0.0]) else {
            return Ok(None);
        };
        let k = -f.solve(&qux);
        let d = -f.solve_vec(&qu);

        vx = &qx + k.tr_mul(&(&quu * &d)) + k.tr_mul(&qu) + qux.tr_mul(&d);
        vxx = symmetrize(&(&qxx + k.tr_mul(&(&quu * &k)) + k.tr_mul(&qux) + qux.tr_mul(&k)));
        gains[t] = k;
        feedforward[t] = d;
    }
    Ok(Some(Sweep { gains, feedforward }))
}

fn backward_with_ladder(
    problem: &ControlProblem,
    xs: &[DVector<f64>],
    us: &[DVector<f64>],
    opts: &IlqgOptions,
) -> Result<Sweep> {
    for &lambda in &opts.regularization {
        if let Some(s) = backward(problem, xs, us, lambda)? {
            return Ok(s);
        }
    }
    Err(PiicError::Solver(
        "control Hessian not positive definite after the regularization ladder".into(),
    ))
}

fn forward(
    problem: &ControlProblem,
    xs: &[DVector<f64>],
    us: &[DVector<f64>],
    sweep: &Sweep,
    step: f64,
) -> Option<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let mut nx_s = Vec::with_capacity(xs.len());
    let mut nu_s = Vec::with_capacity(us.len());
    nx_s.push(problem.x0_mean.clone());
    for t in 0..us.len() {
        let u = &us[t] + &sweep.feedforward[t] * step + &sweep.gains[t] * (&nx_s[t] - &xs[t]);
        let next = problem.dynamics.step_mean(&stack(&nx_s[t], &u)).ok()?;
        if next.iter().any(|v| !v.is_finite()) {
            return None;
        }
        nu_s.push(u);
        nx_s.push(next);
    }
    Some((nx_s, nu_s))
}

/// Runs ILQG from the open-loop controls `init_controls`.
pub fn run_ilqg(
    problem: &ControlProblem,
    init_controls: &[DVector<f64>],
    opts: &IlqgOptions,
) -> Result<IlqgResult> {
    if init_controls.len() != problem.horizon
        || init_controls.iter().any(|u| u.len() != problem.control_dim())
    {
        return Err(PiicError::Dimension(
            "initial controls must be T vectors of length n_u".into(),
        ));
    }
    let mut us = init_controls.to_vec();
    let mut xs = rollout_nominal(problem, &us)?;
    let mut cost = nominal_cost(problem, &xs, &us);
    let mut history = vec![cost];
    let mut converged = false;

    for it in 0..opts.max_iterations {
        let sweep = backward_with_ladder(problem, &xs, &us, opts)?;
        let mut accepted = None;
        for &step in &opts.line_search {
            if let Some((cx, cu)) = forward(problem, &xs, &us, &sweep, step) {
                let c = nominal_cost(problem, &cx, &cu);
                if c.is_finite() && c < cost {
                    accepted = Some((cx, cu, c));
                    break;
                }
            }
        }
        let Some((cx, cu, c)) = accepted else {
            converged = true;
            debug!("ILQG: no improving step at iteration {it}");
            break;
        };
        let decrease = (cost - c) / cost.abs().max(f64::MIN_POSITIVE);
        xs = cx;
        us = cu;
        cost = c;
        history.push(cost);
        if decrease < opts.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("ILQG stopped at the iteration budget with cost {cost}");
    }

    let sweep = backward_with_ladder(problem, &xs, &us, opts)?;
    let offsets = (0..problem.horizon)
        .map(|t| &us[t] + &sweep.feedforward[t] - &sweep.gains[t] * &xs[t])
        .collect();
    Ok(IlqgResult {
        policy: AffinePolicy {
            gains: sweep.gains,
            offsets,
            nominal_states: xs,
            nominal_controls: us,
        },
        cost_history: history,
        converged,
    })
}
