//! Turns a parsed scenario into a control problem and solver settings,
//! collecting every inconsistency before giving up.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::config::{
    issue, Algorithm, BasisConfig, MatrixSpec, ModelConfig, PolicyNoise, ScenarioConfig,
};
use crate::basis::{AffineBasis, Basis, CircleFeature, ObstacleAwareBasis};
use crate::dynamics::{
    Dynamics, LinearModel, MultiUnicycleModel, ProcessNoise, QuadcopterParams,
    QuadcopterWindModel, UnicycleModel,
};
use crate::em::EmOptions;
use crate::error::{ConfigIssue, PiicError, Result};
use crate::gaussian::is_psd;
use crate::ilqg::IlqgOptions;
use crate::objective::{
    BarrierConstraint, ConstraintKind, FormationCost, ObservationSpec, QuadraticStageCost,
};
use crate::policy::ControllerParams;
use crate::problem::ControlProblem;
use crate::smoother::SmootherOptions;
use crate::structure::StructureMask;

/// Command-line replacements applied on top of the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub algorithm: Option<Algorithm>,
    pub seed: Option<u64>,
    pub mc_runs: Option<usize>,
    pub out: Option<std::path::PathBuf>,
    pub emit_plots: bool,
    /// Replaces `gamma` on every barrier.
    pub gamma: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(a) = self.algorithm {
            cfg.algorithm = a;
            // an explicit smoother belongs to the algorithm it was written for
            cfg.em.smoother = None;
        }
        if let Some(s) = self.seed {
            cfg.monte_carlo.base_seed = s;
        }
        if let Some(n) = self.mc_runs {
            cfg.monte_carlo.runs = n;
        }
        if let Some(o) = &self.out {
            cfg.output.dir = Some(o.clone());
        }
        if self.emit_plots {
            cfg.output.emit_plots = true;
        }
        if let Some(g) = self.gamma {
            cfg.barrier.gamma = g;
            for o in &mut cfg.obstacles {
                o.gamma = None;
            }
            for l in &mut cfg.control_limits {
                l.gamma = None;
            }
        }
    }
}

/// Everything needed to infer a controller and evaluate it.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    /// Problem used for inference.
    pub problem: ControlProblem,
    /// Cost and constraints used for Monte Carlo evaluation.
    pub evaluation: ObservationSpec,
    pub initial_params: ControllerParams,
    pub initial_controls: Vec<DVector<f64>>,
    pub em: EmOptions,
    pub ilqg: IlqgOptions,
    pub policy_noise: PolicyNoise,
    /// Basis used at simulation time when it differs from inference.
    pub simulation_basis: Option<Arc<dyn Basis>>,
}

struct Dims {
    nx: usize,
    nu: usize,
    agents: usize,
    agent_nx: usize,
    agent_nu: usize,
}

fn positive(issues: &mut Vec<ConfigIssue>, path: &str, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        issue(issues, path, format!("must be positive and finite (got {v})"));
    }
}

fn vector(
    issues: &mut Vec<ConfigIssue>,
    path: &str,
    v: &[f64],
    n: usize,
) -> Option<DVector<f64>> {
    if v.len() != n {
        issue(issues, path, format!("expected {n} entries, got {}", v.len()));
        return None;
    }
    if v.iter().any(|x| !x.is_finite()) {
        issue(issues, path, "entries must be finite".into());
        return None;
    }
    Some(DVector::from_column_slice(v))
}

fn psd(
    issues: &mut Vec<ConfigIssue>,
    path: &str,
    spec: &MatrixSpec,
    n: usize,
) -> Option<DMatrix<f64>> {
    let m = spec.square(n, path, issues)?;
    if !is_psd(&m, 1e-10) {
        issue(issues, path, "must be symmetric positive semidefinite".into());
        return None;
    }
    Some(m)
}

fn matrix3(m: Option<DMatrix<f64>>) -> Matrix3<f64> {
    m.map(|m| Matrix3::from_iterator(m.iter().copied()))
        .unwrap_or_else(Matrix3::zeros)
}

fn build_model(
    cfg: &ModelConfig,
    issues: &mut Vec<ConfigIssue>,
) -> Option<(Arc<dyn Dynamics>, Dims)> {
    match cfg {
        ModelConfig::Unicycle { dt, process_noise } => {
            positive(issues, "model.dt", *dt);
            let noise = psd(issues, "model.process_noise", process_noise, 3)?;
            let model = UnicycleModel::new(*dt, ProcessNoise::new(noise).ok()?).ok()?;
            Some((
                Arc::new(model),
                Dims {
                    nx: 3,
                    nu: 2,
                    agents: 1,
                    agent_nx: 3,
                    agent_nu: 2,
                },
            ))
        }
        ModelConfig::MultiUnicycle {
            agents,
            dt,
            agent_noise,
        } => {
            positive(issues, "model.dt", *dt);
            if *agents == 0 {
                issue(issues, "model.agents", "must be at least 1".into());
                return None;
            }
            let noise = psd(issues, "model.agent_noise", agent_noise, 3)?;
            let model = MultiUnicycleModel::new(*agents, *dt, &noise).ok()?;
            Some((
                Arc::new(model),
                Dims {
                    nx: 3 * agents,
                    nu: 2 * agents,
                    agents: *agents,
                    agent_nx: 3,
                    agent_nu: 2,
                },
            ))
        }
        ModelConfig::Quadcopter {
            dt,
            mass,
            gravity,
            air_density,
            drag,
            wind_a,
            wind_c,
            process_noise,
        } => {
            positive(issues, "model.dt", *dt);
            positive(issues, "model.mass", *mass);
            if !(*air_density >= 0.0) {
                issue(issues, "model.air_density", "must be non-negative".into());
            }
            let a = wind_a
                .as_ref()
                .map(|m| m.square(3, "model.wind_a", issues));
            let c = wind_c
                .as_ref()
                .map(|m| m.square(3, "model.wind_c", issues));
            let noise = psd(issues, "model.process_noise", process_noise, 12)?;
            let params = QuadcopterParams {
                dt: *dt,
                mass: *mass,
                gravity: Vector3::from(*gravity),
                air_density: *air_density,
                drag: Vector3::from(*drag),
                wind_a: matrix3(a.flatten()),
                wind_c: matrix3(c.flatten()),
            };
            let model = QuadcopterWindModel::new(params, ProcessNoise::new(noise).ok()?).ok()?;
            Some((
                Arc::new(model),
                Dims {
                    nx: 12,
                    nu: 4,
                    agents: 1,
                    agent_nx: 12,
                    agent_nu: 4,
                },
            ))
        }
        ModelConfig::Linear {
            a,
            b,
            offset,
            process_noise,
        } => {
            let Some((nx, nx2)) = a.declared_shape() else {
                issue(issues, "model.a", "needs an explicit shape".into());
                return None;
            };
            if nx != nx2 {
                issue(issues, "model.a", "must be square".into());
                return None;
            }
            let Some((bx, nu)) = b.declared_shape() else {
                issue(issues, "model.b", "needs an explicit shape".into());
                return None;
            };
            if bx != nx {
                issue(issues, "model.b", format!("needs {nx} rows to match model.a"));
            }
            let a = a.shaped(nx, nx, "model.a", issues);
            let b = b.shaped(nx, nu, "model.b", issues);
            let c = match offset {
                Some(o) => vector(issues, "model.offset", o, nx),
                None => Some(DVector::zeros(nx)),
            };
            let noise = psd(issues, "model.process_noise", process_noise, nx);
            let model = LinearModel::with_offset(a?, b?, c?, ProcessNoise::new(noise?).ok()?).ok()?;
            Some((
                Arc::new(model),
                Dims {
                    nx,
                    nu,
                    agents: 1,
                    agent_nx: nx,
                    agent_nu: nu,
                },
            ))
        }
    }
}

fn agent_list(
    issues: &mut Vec<ConfigIssue>,
    path: &str,
    agents: &Option<Vec<usize>>,
    n: usize,
) -> Vec<usize> {
    match agents {
        None => (0..n).collect(),
        Some(list) => list
            .iter()
            .filter_map(|&a| {
                if a == 0 || a > n {
                    issue(issues, path, format!("agent {a} outside 1..={n}"));
                    None
                } else {
                    Some(a - 1)
                }
            })
            .collect(),
    }
}

fn barrier(
    issues: &mut Vec<ConfigIssue>,
    path: &str,
    kind: ConstraintKind,
    weight: f64,
    gamma: f64,
    epsilon: f64,
) -> Option<BarrierConstraint> {
    let mut ok = true;
    for (key, v) in [("weight", weight), ("gamma", gamma), ("epsilon", epsilon)] {
        if !(v > 0.0 && v.is_finite()) {
            issue(issues, &format!("{path}.{key}"), format!("must be positive (got {v})"));
            ok = false;
        }
    }
    if !ok {
        return None;
    }
    BarrierConstraint::new(kind, weight, gamma, epsilon).ok()
}

fn build_constraints(
    cfg: &ScenarioConfig,
    dims: &Dims,
    issues: &mut Vec<ConfigIssue>,
) -> (Vec<BarrierConstraint>, Vec<CircleFeature>) {
    let d = &cfg.barrier;
    let mut out = Vec::new();
    let mut circles = Vec::new();
    for (i, o) in cfg.obstacles.iter().enumerate() {
        let path = format!("obstacles[{i}]");
        if !(o.radius > 0.0) {
            issue(issues, &format!("{path}.radius"), format!("must be positive (got {})", o.radius));
        }
        if !(o.safety_radius >= 0.0) {
            issue(issues, &format!("{path}.safety_radius"), "must be non-negative".into());
        }
        for (key, idx) in [("x_index", o.x_index), ("y_index", o.y_index)] {
            if idx >= dims.agent_nx {
                issue(
                    issues,
                    &format!("{path}.{key}"),
                    format!("index {idx} outside a state of dimension {}", dims.agent_nx),
                );
            }
        }
        if o.x_index == o.y_index {
            issue(issues, &format!("{path}.y_index"), "must differ from x_index".into());
        }
        let agents = agent_list(issues, &format!("{path}.agents"), &o.agents, dims.agents);
        if o.x_index >= dims.agent_nx || o.y_index >= dims.agent_nx || !(o.radius > 0.0) {
            continue;
        }
        for a in agents {
            let off = a * dims.agent_nx;
            let kind = ConstraintKind::Obstacle {
                x_index: off + o.x_index,
                y_index: off + o.y_index,
                center: o.center,
                radius: o.radius,
                safety_radius: o.safety_radius,
            };
            circles.push(CircleFeature {
                x_index: off + o.x_index,
                y_index: off + o.y_index,
                center: o.center,
                radius: o.radius,
            });
            if let Some(c) = barrier(
                issues,
                &path,
                kind,
                o.weight.unwrap_or(d.weight),
                o.gamma.unwrap_or(d.gamma),
                o.epsilon.unwrap_or(d.epsilon),
            ) {
                out.push(c);
            }
        }
    }
    for (i, l) in cfg.control_limits.iter().enumerate() {
        let path = format!("control_limits[{i}]");
        if l.index >= dims.agent_nu {
            issue(
                issues,
                &format!("{path}.index"),
                format!("index {} outside a control of dimension {}", l.index, dims.agent_nu),
            );
            continue;
        }
        if !(l.lo < l.hi) {
            issue(issues, &format!("{path}.hi"), format!("needs lo < hi (got {}, {})", l.lo, l.hi));
            continue;
        }
        for a in agent_list(issues, &format!("{path}.agents"), &l.agents, dims.agents) {
            let index = a * dims.agent_nu + l.index;
            for kind in [
                ConstraintKind::ControlLower { index, bound: l.lo },
                ConstraintKind::ControlUpper { index, bound: l.hi },
            ] {
                if let Some(c) = barrier(
                    issues,
                    &path,
                    kind,
                    l.weight.unwrap_or(d.weight),
                    l.gamma.unwrap_or(d.gamma),
                    l.epsilon.unwrap_or(d.epsilon),
                ) {
                    out.push(c);
                }
            }
        }
    }
    (out, circles)
}

fn build_formation(
    cfg: &ScenarioConfig,
    dims: &Dims,
    issues: &mut Vec<ConfigIssue>,
) -> Option<FormationCost> {
    let f = cfg.formation.as_ref()?;
    if dims.agents < 2 {
        issue(issues, "formation", "needs a multi-agent model".into());
        return None;
    }
    let mut edges = Vec::new();
    for (i, e) in f.edges.iter().enumerate() {
        if e.iter().any(|&a| a == 0 || a > dims.agents) || e[0] == e[1] {
            issue(
                issues,
                &format!("formation.edges[{i}]"),
                format!("edge ({}, {}) needs two distinct agents in 1..={}", e[0], e[1], dims.agents),
            );
        } else {
            edges.push((e[0], e[1]));
        }
    }
    if edges.len() != f.edges.len() || edges.is_empty() {
        if edges.is_empty() {
            issue(issues, "formation.edges", "needs at least one edge".into());
        }
        return None;
    }
    let dim = edges.len() * dims.agent_nx;
    let delta = vector(issues, "formation.delta_star", &f.delta_star, dim);
    let weight = psd(issues, "formation.weight", &f.weight, dim);
    let incidence = FormationCost::incidence_from_edges(dims.agents, &edges).ok()?;
    FormationCost::new(incidence, delta?, weight?, dims.agent_nx).ok()
}

fn build_cost(
    cfg: &ScenarioConfig,
    dims: &Dims,
    issues: &mut Vec<ConfigIssue>,
) -> Option<QuadraticStageCost> {
    let c = &cfg.cost;
    let q = psd(issues, "cost.q", &c.q, dims.nx);
    let r = psd(issues, "cost.r", &c.r, dims.nu);
    let qt = psd(issues, "cost.q_terminal", &c.q_terminal, dims.nx);
    let xt = vector(issues, "cost.x_target", &c.x_target, dims.nx);
    let ut = match &c.u_target {
        Some(u) => vector(issues, "cost.u_target", u, dims.nu),
        None => Some(DVector::zeros(dims.nu)),
    };
    let xtt = match &c.x_target_terminal {
        Some(x) => vector(issues, "cost.x_target_terminal", x, dims.nx),
        None => xt.clone(),
    };
    Some(QuadraticStageCost {
        q: q?,
        r: r?,
        x_target: xt?,
        u_target: ut?,
        q_terminal: qt?,
        x_target_terminal: xtt?,
    })
}

fn build_mask(
    cfg: &ScenarioConfig,
    nb: usize,
    nu: usize,
    issues: &mut Vec<ConfigIssue>,
) -> Option<StructureMask> {
    let s = cfg.structure.as_ref()?;
    let rows: usize = s.row_blocks.iter().sum();
    let cols: usize = s.col_blocks.iter().sum();
    let mut ok = true;
    if rows != nb {
        issue(
            issues,
            "structure.row_blocks",
            format!("block sizes sum to {rows}, basis has {nb} rows"),
        );
        ok = false;
    }
    if cols != nu {
        issue(
            issues,
            "structure.col_blocks",
            format!("block sizes sum to {cols}, control has {nu} entries"),
        );
        ok = false;
    }
    let mut flow = Vec::new();
    for (i, f) in s.flow.iter().enumerate() {
        if f[0] == 0 || f[0] > s.row_blocks.len() || f[1] == 0 || f[1] > s.col_blocks.len() {
            issue(
                issues,
                &format!("structure.flow[{i}]"),
                format!(
                    "pair ({}, {}) outside {}x{} blocks",
                    f[0],
                    f[1],
                    s.row_blocks.len(),
                    s.col_blocks.len()
                ),
            );
            ok = false;
        } else {
            flow.push((f[0] - 1, f[1] - 1));
        }
    }
    if !ok {
        return None;
    }
    match StructureMask::from_blocks(&s.row_blocks, &s.col_blocks, &flow) {
        Ok(m) => Some(m),
        Err(e) => {
            issue(issues, "structure", e.to_string());
            None
        }
    }
}

impl Scenario {
    pub fn from_config(config: ScenarioConfig) -> Result<Self> {
        let mut issues = Vec::new();
        let cfg = &config;
        if cfg.horizon == 0 {
            issue(&mut issues, "horizon", "must be at least 1".into());
        }
        if cfg.monte_carlo.runs == 0 {
            issue(&mut issues, "monte_carlo.runs", "must be at least 1".into());
        }
        positive(
            &mut issues,
            "monte_carlo.obstacle_radius_scale",
            cfg.monte_carlo.obstacle_radius_scale,
        );
        let smoother = cfg.algorithm.smoother();
        if let (Some(explicit), Some(implied)) = (cfg.em.smoother, smoother) {
            if explicit != implied {
                issue(
                    &mut issues,
                    "em.smoother",
                    format!(
                        "conflicts with algorithm `{}`, which uses the {:?} smoother",
                        cfg.algorithm.name(),
                        implied
                    ),
                );
            }
        }
        if cfg.algorithm == Algorithm::Ilqg && cfg.monte_carlo.policy_noise == Some(PolicyNoise::Learned) {
            issue(
                &mut issues,
                "monte_carlo.policy_noise",
                "ilqg produces a deterministic policy; use `none`".into(),
            );
        }
        positive(&mut issues, "em.initial_alpha", cfg.em.initial_alpha);
        positive(&mut issues, "em.tolerance", cfg.em.tolerance);
        if !(cfg.em.ridge >= 0.0) {
            issue(&mut issues, "em.ridge", "must be non-negative".into());
        }
        if cfg.em.max_iterations == 0 {
            issue(&mut issues, "em.max_iterations", "must be at least 1".into());
        }
        if cfg.ilqg.max_iterations == 0 {
            issue(&mut issues, "ilqg.max_iterations", "must be at least 1".into());
        }

        let built = build_model(&cfg.model, &mut issues);
        let Some((dynamics, dims)) = built else {
            if issues.is_empty() {
                issue(&mut issues, "model", "could not be constructed".into());
            }
            return Err(PiicError::Config(issues));
        };
        if let Err(e) = cfg.em.sigma_points.validate(dims.nx) {
            issue(&mut issues, "em.sigma_points", e.to_string());
        }
        let x0_mean = vector(&mut issues, "initial_state.mean", &cfg.initial_state.mean, dims.nx);
        let x0_cov = psd(&mut issues, "initial_state.cov", &cfg.initial_state.cov, dims.nx);
        let cost = build_cost(cfg, &dims, &mut issues);
        let (constraints, circles) = build_constraints(cfg, &dims, &mut issues);
        let formation = build_formation(cfg, &dims, &mut issues);
        if cfg.formation.is_some() && formation.is_none() && !issues.iter().any(|i| i.path.starts_with("formation")) {
            issue(&mut issues, "formation", "could not be assembled".into());
        }

        let basis: Arc<dyn Basis> = match cfg.basis {
            BasisConfig::Affine | BasisConfig::LinearWind => Arc::new(AffineBasis),
            BasisConfig::ObstacleAware => {
                if circles.is_empty() {
                    issue(&mut issues, "basis", "obstacle-aware basis needs at least one obstacle".into());
                }
                Arc::new(ObstacleAwareBasis::new(circles.clone()))
            }
        };
        let simulation_basis: Option<Arc<dyn Basis>> = match cfg.basis {
            BasisConfig::ObstacleAware if cfg.monte_carlo.obstacle_radius_scale != 1.0 => Some(Arc::new(
                ObstacleAwareBasis::new(circles).with_radius_scale(cfg.monte_carlo.obstacle_radius_scale),
            )),
            _ => None,
        };
        let nb = basis.dim(dims.nx);
        let mask = build_mask(cfg, nb, dims.nu, &mut issues);
        if cfg.structure.is_some() && cfg.algorithm == Algorithm::Ilqg {
            issue(&mut issues, "structure", "ilqg cannot impose a gain structure".into());
        }
        let u0 = vector(
            &mut issues,
            "policy.initial_control_mean",
            &cfg.policy.initial_control_mean,
            dims.nu,
        );
        let sigma0 = cfg
            .policy
            .initial_covariance
            .square(dims.nu, "policy.initial_covariance", &mut issues);
        if let Some(s) = &sigma0 {
            if crate::gaussian::cholesky_psd(s, &[0.0]).is_err() {
                issue(&mut issues, "policy.initial_covariance", "must be positive definite".into());
            }
        }

        if !issues.is_empty() {
            return Err(PiicError::Config(issues));
        }
        let fail = |e: PiicError| PiicError::Config(vec![ConfigIssue {
            path: String::new(),
            message: e.to_string(),
        }]);
        let (x0_mean, x0_cov, cost, u0, sigma0) = (
            x0_mean.unwrap(),
            x0_cov.unwrap(),
            cost.unwrap(),
            u0.unwrap(),
            sigma0.unwrap(),
        );
        let observation = ObservationSpec::new(cost, constraints, formation).map_err(fail)?;
        let evaluation = if cfg.monte_carlo.obstacle_radius_scale != 1.0 {
            observation
                .with_obstacle_scale(cfg.monte_carlo.obstacle_radius_scale)
                .map_err(fail)?
        } else {
            observation.clone()
        };
        let problem = ControlProblem::new(dynamics, observation, cfg.horizon, x0_mean, x0_cov)
            .map_err(fail)?;
        let mut params = ControllerParams::initial(basis, dims.nx, &u0, &sigma0, cfg.horizon, dims.nx)
            .map_err(fail)?
            .time_invariant(cfg.policy.time_invariant);
        if let Some(m) = mask {
            params = params.with_mask(m).map_err(fail)?;
        }
        let em = EmOptions {
            smoother: SmootherOptions {
                kind: smoother.unwrap_or(crate::smoother::SmootherKind::Unscented),
                sigma: cfg.em.sigma_points,
                gauss_newton: cfg.em.gauss_newton,
            },
            max_iterations: cfg.em.max_iterations,
            tolerance: cfg.em.tolerance,
            ridge: cfg.em.ridge,
            initial_alpha: cfg.em.initial_alpha,
        };
        let ilqg = IlqgOptions {
            max_iterations: cfg.ilqg.max_iterations,
            tolerance: cfg.ilqg.tolerance,
            ..IlqgOptions::default()
        };
        let policy_noise = cfg.monte_carlo.policy_noise.unwrap_or(match cfg.algorithm {
            Algorithm::Ilqg => PolicyNoise::None,
            _ => PolicyNoise::Learned,
        });
        Ok(Self {
            initial_controls: vec![u0; cfg.horizon],
            config,
            problem,
            evaluation,
            initial_params: params,
            em,
            ilqg,
            policy_noise,
            simulation_basis,
        })
    }
}
