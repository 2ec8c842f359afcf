//! Closed-loop simulation of inferred controllers.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::config::PolicyNoise;
use crate::basis::Basis;
use crate::dynamics::{Dynamics, ProcessNoise};
use crate::error::{PiicError, Result};
use crate::gaussian::cholesky_default;
use crate::ilqg::AffinePolicy;
use crate::objective::ObservationSpec;
use crate::policy::ControllerParams;

/// A feedback law ready for simulation.
#[derive(Debug, Clone)]
pub enum Policy {
    Piic {
        params: ControllerParams,
        /// Square roots of `Sigma_delta_t`, or `None` for mean control.
        noise_factors: Option<Vec<DMatrix<f64>>>,
    },
    Affine(AffinePolicy),
}

impl Policy {
    /// `basis` replaces the inference basis at simulation time when given.
    pub fn piic(
        params: &ControllerParams,
        noise: PolicyNoise,
        basis: Option<Arc<dyn Basis>>,
    ) -> Result<Self> {
        let params = match basis {
            Some(b) => params.with_basis(b),
            None => params.clone(),
        };
        let noise_factors = match noise {
            PolicyNoise::Learned => Some(
                params
                    .noise
                    .iter()
                    .enumerate()
                    .map(|(t, s)| cholesky_default(s).map(|f| f.l).map_err(|e| e.at_time(t)))
                    .collect::<Result<_>>()?,
            ),
            PolicyNoise::None => None,
        };
        Ok(Policy::Piic {
            params,
            noise_factors,
        })
    }

    pub fn horizon(&self) -> usize {
        match self {
            Policy::Piic { params, .. } => params.horizon(),
            Policy::Affine(p) => p.horizon(),
        }
    }

    fn control(&self, t: usize, x: &DVector<f64>, draw: &DVector<f64>) -> DVector<f64> {
        match self {
            Policy::Piic {
                params,
                noise_factors,
            } => {
                let mean = params.mean_control(t, x.as_slice());
                match noise_factors {
                    Some(l) => mean + &l[t] * draw,
                    None => mean,
                }
            }
            Policy::Affine(p) => p.control(t, x),
        }
    }
}

/// One simulated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutRecord {
    pub run: usize,
    pub seed: u64,
    /// `T + 1` states.
    pub states: Vec<DVector<f64>>,
    /// `T` controls.
    pub controls: Vec<DVector<f64>>,
    /// Running costs for `t < T` followed by the terminal cost.
    pub stage_costs: Vec<f64>,
    /// `K_j` per step; `NaN` where a constraint reads a control at `T`.
    pub constraint_values: Vec<Vec<f64>>,
    pub cost: f64,
    /// Steps with `K_j <= 0`, per constraint.
    pub violations: Vec<usize>,
}

impl RolloutRecord {
    pub fn total_violations(&self) -> usize {
        self.violations.iter().sum()
    }
}

fn normal(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Simulates one closed-loop trajectory. Draws are taken in a fixed order
/// (initial state, then per step a control draw and a process draw) whether
/// or not the corresponding noise is active, so different policies share
/// the same noise realization for a given seed.
pub fn rollout(
    dynamics: &dyn Dynamics,
    spec: &ObservationSpec,
    policy: &Policy,
    x0_mean: &DVector<f64>,
    x0_cov: &DMatrix<f64>,
    run: usize,
    seed: u64,
) -> Result<RolloutRecord> {
    let nx = dynamics.state_dim();
    let nu = dynamics.control_dim();
    let horizon = policy.horizon();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0_factor = ProcessNoise::new(x0_cov.clone())?.factor;

    let mut x = x0_mean + x0_factor * normal(&mut rng, nx);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut controls = Vec::with_capacity(horizon);
    let mut stage_costs = Vec::with_capacity(horizon + 1);
    let mut constraint_values = Vec::with_capacity(horizon + 1);
    let mut violations = vec![0; spec.constraints.len()];
    let terminal = spec.terminal_constraints();

    for t in 0..horizon {
        let u_draw = normal(&mut rng, nu);
        let eta = normal(&mut rng, nx);
        let u = policy.control(t, &x, &u_draw);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(PiicError::Divergence { step: t });
        }
        let k: Vec<f64> = spec
            .constraints
            .iter()
            .map(|c| c.value(x.as_slice(), u.as_slice()))
            .collect();
        for (j, v) in k.iter().enumerate() {
            if *v <= 0.0 {
                violations[j] += 1;
            }
        }
        stage_costs.push(spec.stage_cost(x.as_slice(), u.as_slice()));
        constraint_values.push(k);
        let mut tau = DVector::zeros(nx + nu);
        tau.rows_mut(0, nx).copy_from(&x);
        tau.rows_mut(nx, nu).copy_from(&u);
        let next = dynamics
            .sample_step(&tau, &eta)
            .map_err(|_| PiicError::Divergence { step: t })?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(PiicError::Divergence { step: t + 1 });
        }
        states.push(std::mem::replace(&mut x, next));
        controls.push(u);
    }
    let k_terminal: Vec<f64> = spec
        .constraints
        .iter()
        .enumerate()
        .map(|(j, c)| {
            if terminal.contains(&j) {
                let v = c.value(x.as_slice(), &[]);
                if v <= 0.0 {
                    violations[j] += 1;
                }
                v
            } else {
                f64::NAN
            }
        })
        .collect();
    stage_costs.push(spec.terminal_cost(x.as_slice()));
    constraint_values.push(k_terminal);
    states.push(x);
    let cost: f64 = stage_costs.iter().sum();
    if !cost.is_finite() {
        return Err(PiicError::Divergence { step: horizon });
    }
    Ok(RolloutRecord {
        run,
        seed,
        states,
        controls,
        stage_costs,
        constraint_values,
        cost,
        violations,
    })
}

/// A run excluded from the statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergedRun {
    pub run: usize,
    pub seed: u64,
    pub step: usize,
}

#[derive(Debug, Clone)]
pub struct McSummary {
    pub runs: usize,
    pub mean_cost: f64,
    /// Sample standard deviation (divisor `n - 1`); 0 when fewer than two
    /// runs completed.
    pub std_cost: f64,
    /// Set when `std_cost` is the single-sample convention.
    pub std_degenerate: bool,
    pub total_violations: usize,
    pub violations_per_constraint: Vec<usize>,
    /// Runs with at least one violation.
    pub violating_runs: usize,
    pub diverged: Vec<DivergedRun>,
    /// Completed runs in run order.
    pub records: Vec<RolloutRecord>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Runs `n_runs` rollouts with seeds `base_seed + i` in parallel and
/// aggregates them in run order.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo(
    dynamics: &dyn Dynamics,
    spec: &ObservationSpec,
    policy: &Policy,
    x0_mean: &DVector<f64>,
    x0_cov: &DMatrix<f64>,
    n_runs: usize,
    base_seed: u64,
) -> Result<McSummary> {
    if n_runs == 0 {
        return Err(PiicError::Validation("Monte Carlo needs at least one run".into()));
    }
    let results: Vec<(usize, u64, Result<RolloutRecord>)> = (0..n_runs)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed.wrapping_add(i as u64);
            (i, seed, rollout(dynamics, spec, policy, x0_mean, x0_cov, i, seed))
        })
        .collect();
    let mut records = Vec::with_capacity(n_runs);
    let mut diverged = Vec::new();
    for (run, seed, r) in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(PiicError::Divergence { step }) => {
                log::warn!("run {run} (seed {seed}) diverged at step {step}");
                diverged.push(DivergedRun { run, seed, step });
            }
            Err(e) => return Err(e),
        }
    }
    let costs: Vec<f64> = records.iter().map(|r| r.cost).collect();
    let (mean_cost, std_cost) = mean_std(&costs);
    let mut per = vec![0; spec.constraints.len()];
    for r in &records {
        for (p, v) in per.iter_mut().zip(&r.violations) {
            *p += v;
        }
    }
    Ok(McSummary {
        runs: n_runs,
        mean_cost,
        std_cost,
        std_degenerate: records.len() < 2,
        total_violations: per.iter().sum(),
        violations_per_constraint: per,
        violating_runs: records.iter().filter(|r| r.total_violations() > 0).count(),
        diverged,
        records,
    })
}
