//! Scenario file schema.
//!
//! Matrices are written as a scalar (`s * I`), `{ diag = [...] }` or
//! `{ shape = [r, c], data = [...] }` in row-major order. Agents, edges and
//! structure blocks are numbered from 1; vector component indices from 0.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ConfigIssue, PiicError, Result};
use crate::smoother::{GaussNewtonConfig, SigmaPointConfig, SmootherKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Diag { diag: Vec<f64> },
    Full { shape: [usize; 2], data: Vec<f64> },
}

impl MatrixSpec {
    /// Square `n x n` matrix, or `None` with an issue recorded.
    pub fn square(&self, n: usize, path: &str, issues: &mut Vec<ConfigIssue>) -> Option<DMatrix<f64>> {
        self.shaped(n, n, path, issues)
    }

    pub fn shaped(
        &self,
        rows: usize,
        cols: usize,
        path: &str,
        issues: &mut Vec<ConfigIssue>,
    ) -> Option<DMatrix<f64>> {
        let m = match self {
            MatrixSpec::Scalar(s) if rows == cols => DMatrix::identity(rows, cols) * *s,
            MatrixSpec::Diag { diag } if rows == cols && diag.len() == rows => {
                DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag))
            }
            MatrixSpec::Full { shape, data }
                if shape[0] == rows && shape[1] == cols && data.len() == rows * cols =>
            {
                DMatrix::from_row_slice(rows, cols, data)
            }
            MatrixSpec::Full { shape, data } if data.len() != shape[0] * shape[1] => {
                issue(
                    issues,
                    path,
                    format!("shape {}x{} needs {} entries, got {}", shape[0], shape[1], shape[0] * shape[1], data.len()),
                );
                return None;
            }
            _ => {
                issue(issues, path, format!("expected a {rows}x{cols} matrix"));
                return None;
            }
        };
        if m.iter().any(|v| !v.is_finite()) {
            issue(issues, path, "entries must be finite".into());
            return None;
        }
        Some(m)
    }

    /// Shape declared by a full matrix.
    pub fn declared_shape(&self) -> Option<(usize, usize)> {
        match self {
            MatrixSpec::Full { shape, .. } => Some((shape[0], shape[1])),
            _ => None,
        }
    }
}

pub(crate) fn issue(issues: &mut Vec<ConfigIssue>, path: &str, message: String) {
    issues.push(ConfigIssue {
        path: path.to_string(),
        message,
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Upiic,
    Fgpiic,
    Ilqg,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Upiic => "upiic",
            Algorithm::Fgpiic => "fgpiic",
            Algorithm::Ilqg => "ilqg",
        }
    }

    pub fn smoother(self) -> Option<SmootherKind> {
        match self {
            Algorithm::Upiic => Some(SmootherKind::Unscented),
            Algorithm::Fgpiic => Some(SmootherKind::Map),
            Algorithm::Ilqg => None,
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "upiic" => Ok(Algorithm::Upiic),
            "fgpiic" => Ok(Algorithm::Fgpiic),
            "ilqg" => Ok(Algorithm::Ilqg),
            other => Err(format!("unknown algorithm `{other}` (expected upiic, fgpiic or ilqg)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub algorithm: Algorithm,
    pub horizon: usize,
    pub model: ModelConfig,
    pub initial_state: InitialStateConfig,
    pub cost: CostConfig,
    #[serde(default)]
    pub barrier: BarrierDefaults,
    #[serde(default)]
    pub obstacles: Vec<ObstacleConfig>,
    #[serde(default)]
    pub control_limits: Vec<ControlLimitConfig>,
    pub formation: Option<FormationConfig>,
    #[serde(default)]
    pub basis: BasisConfig,
    pub structure: Option<StructureConfig>,
    pub policy: PolicyConfig,
    #[serde(default)]
    pub em: EmConfig,
    #[serde(default)]
    pub ilqg: IlqgConfig,
    #[serde(default)]
    pub monte_carlo: MonteCarloConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Unicycle {
        dt: f64,
        process_noise: MatrixSpec,
    },
    MultiUnicycle {
        agents: usize,
        dt: f64,
        /// Per-agent 3x3 covariance.
        agent_noise: MatrixSpec,
    },
    Quadcopter {
        dt: f64,
        #[serde(default = "default_mass")]
        mass: f64,
        #[serde(default = "default_gravity")]
        gravity: [f64; 3],
        #[serde(default = "default_air_density")]
        air_density: f64,
        #[serde(default = "default_drag")]
        drag: [f64; 3],
        wind_a: Option<MatrixSpec>,
        wind_c: Option<MatrixSpec>,
        process_noise: MatrixSpec,
    },
    Linear {
        a: MatrixSpec,
        b: MatrixSpec,
        offset: Option<Vec<f64>>,
        process_noise: MatrixSpec,
    },
}

fn default_mass() -> f64 {
    1.0
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}

fn default_air_density() -> f64 {
    1.225
}

fn default_drag() -> [f64; 3] {
    [0.1, 0.1, 0.1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialStateConfig {
    pub mean: Vec<f64>,
    pub cov: MatrixSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostConfig {
    pub q: MatrixSpec,
    pub r: MatrixSpec,
    pub x_target: Vec<f64>,
    /// Zero when omitted.
    pub u_target: Option<Vec<f64>>,
    pub q_terminal: MatrixSpec,
    /// `x_target` when omitted.
    pub x_target_terminal: Option<Vec<f64>>,
}

/// Barrier parameters shared by every constraint unless overridden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierDefaults {
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default = "one")]
    pub epsilon: f64,
    #[serde(default = "one")]
    pub weight: f64,
}

impl Default for BarrierDefaults {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            epsilon: 1.0,
            weight: 1.0,
        }
    }
}

fn one() -> f64 {
    1.0
}

/// Circular obstacle. For multi-agent models the indices are relative to
/// each listed agent (all agents when `agents` is omitted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleConfig {
    pub center: [f64; 2],
    pub radius: f64,
    #[serde(default)]
    pub safety_radius: f64,
    pub weight: Option<f64>,
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub x_index: usize,
    #[serde(default = "default_y_index")]
    pub y_index: usize,
    pub agents: Option<Vec<usize>>,
}

fn default_y_index() -> usize {
    1
}

/// `lo < u[index] < hi`, per agent for multi-agent models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlLimitConfig {
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
    pub weight: Option<f64>,
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
    pub agents: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormationConfig {
    /// `(head, tail)` agent pairs.
    pub edges: Vec<[usize; 2]>,
    pub delta_star: Vec<f64>,
    pub weight: MatrixSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisConfig {
    /// `[x; 1]`.
    #[default]
    Affine,
    /// `[x; 1]` over the full state including the wind block.
    LinearWind,
    /// `[x; 1; sum_i c_i(x)]` over the scenario obstacles.
    ObstacleAware,
}

/// Block sparsity of `Theta`: basis rows grouped by `row_blocks` sizes,
/// controls by `col_blocks` sizes; `flow` lists the allowed
/// `(row block, control block)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructureConfig {
    pub row_blocks: Vec<usize>,
    pub col_blocks: Vec<usize>,
    pub flow: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub initial_control_mean: Vec<f64>,
    pub initial_covariance: MatrixSpec,
    #[serde(default)]
    pub time_invariant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmConfig {
    #[serde(default = "default_em_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_em_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "one")]
    pub initial_alpha: f64,
    /// Must agree with the algorithm when given.
    pub smoother: Option<SmootherKind>,
    #[serde(default)]
    pub sigma_points: SigmaPointConfig,
    #[serde(default)]
    pub gauss_newton: GaussNewtonConfig,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iterations: default_em_iterations(),
            tolerance: default_em_tolerance(),
            ridge: default_ridge(),
            initial_alpha: 1.0,
            smoother: None,
            sigma_points: SigmaPointConfig::default(),
            gauss_newton: GaussNewtonConfig::default(),
        }
    }
}

fn default_em_iterations() -> usize {
    100
}

fn default_em_tolerance() -> f64 {
    1e-3
}

fn default_ridge() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IlqgConfig {
    #[serde(default = "default_ilqg_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_ilqg_tolerance")]
    pub tolerance: f64,
}

impl Default for IlqgConfig {
    fn default() -> Self {
        Self {
            max_iterations: default_ilqg_iterations(),
            tolerance: default_ilqg_tolerance(),
        }
    }
}

fn default_ilqg_iterations() -> usize {
    200
}

fn default_ilqg_tolerance() -> f64 {
    1e-9
}

/// Control noise used when simulating the inferred policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyNoise {
    /// Sample `u ~ N(Theta^T B(x), Sigma_delta)`.
    Learned,
    /// Apply the mean control.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// `learned` for PIIC and `none` for ILQG when omitted.
    pub policy_noise: Option<PolicyNoise>,
    /// Multiplies every obstacle radius at simulation time.
    #[serde(default = "one")]
    pub obstacle_radius_scale: f64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            runs: default_runs(),
            base_seed: 0,
            policy_noise: None,
            obstacle_radius_scale: 1.0,
        }
    }
}

fn default_runs() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Relative paths resolve against the scenario file's directory.
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub emit_plots: bool,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| {
            PiicError::Config(vec![ConfigIssue {
                path: String::new(),
                message: e.message().to_string(),
            }])
        })?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let mut path = e.path().to_string();
            let message = e.inner().message().to_string();
            if let Some(field) = missing_field(&message) {
                path = if path == "." || path.is_empty() {
                    field.to_string()
                } else {
                    format!("{path}.{field}")
                };
            }
            PiicError::Config(vec![ConfigIssue { path, message }])
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }
}

fn missing_field(message: &str) -> Option<&str> {
    let rest = message.strip_prefix("missing field `")?;
    rest.split('`').next()
}
