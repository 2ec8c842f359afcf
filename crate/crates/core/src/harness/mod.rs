//! Scenario loading, controller inference, Monte Carlo evaluation and
//! artifact output.

mod build;
pub mod config;
pub mod output;
mod rollout;

use std::path::{Path, PathBuf};

use log::info;

pub use build::{Overrides, Scenario};
pub use config::{Algorithm, PolicyNoise, ScenarioConfig};
pub use rollout::{mean_std, monte_carlo, rollout, DivergedRun, McSummary, Policy, RolloutRecord};

use crate::em::{run_piic, PiicResult};
use crate::error::{PiicError, Result};
use crate::ilqg::{run_ilqg, IlqgResult};
use config::ModelConfig;
use output::{Ellipse, InferenceSummary, SummaryFile};

/// Result of the inference stage.
#[derive(Debug, Clone)]
pub enum Inference {
    Piic(PiicResult),
    Ilqg(IlqgResult),
}

impl Scenario {
    /// Reads, overrides and validates a scenario file.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let mut cfg = ScenarioConfig::load(path)?;
        overrides.apply(&mut cfg);
        Self::from_config(cfg)
    }

    pub fn infer(&self) -> Result<Inference> {
        match self.config.algorithm {
            Algorithm::Ilqg => Ok(Inference::Ilqg(run_ilqg(
                &self.problem,
                &self.initial_controls,
                &self.ilqg,
            )?)),
            _ => Ok(Inference::Piic(run_piic(
                &self.problem,
                self.initial_params.clone(),
                &self.em,
            )?)),
        }
    }

    pub fn policy(&self, inference: &Inference) -> Result<Policy> {
        match inference {
            Inference::Piic(r) => {
                Policy::piic(&r.params, self.policy_noise, self.simulation_basis.clone())
            }
            Inference::Ilqg(r) => Ok(Policy::Affine(r.policy.clone())),
        }
    }

    pub fn evaluate(&self, inference: &Inference) -> Result<McSummary> {
        let policy = self.policy(inference)?;
        monte_carlo(
            self.problem.dynamics.as_ref(),
            &self.evaluation,
            &policy,
            &self.problem.x0_mean,
            &self.problem.x0_cov,
            self.config.monte_carlo.runs,
            self.config.monte_carlo.base_seed,
        )
    }

    /// `(x, y)` state indices of every agent's planar position.
    pub fn positions(&self) -> Vec<(usize, usize)> {
        match &self.config.model {
            ModelConfig::MultiUnicycle { agents, .. } => {
                (0..*agents).map(|a| (3 * a, 3 * a + 1)).collect()
            }
            _ => vec![(0, 1)],
        }
    }
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub scenario: Scenario,
    pub inference: Inference,
    pub summary: McSummary,
    pub out_dir: PathBuf,
}

/// Output directory: the override, else the config entry resolved against
/// the scenario file's directory, else `out/<name>`.
pub fn output_dir(cfg: &ScenarioConfig, config_path: &Path) -> PathBuf {
    match &cfg.output.dir {
        Some(d) if d.is_absolute() => d.clone(),
        Some(d) => config_path.parent().unwrap_or(Path::new(".")).join(d),
        None => PathBuf::from("out").join(&cfg.name),
    }
}

fn ellipses(scenario: &Scenario, inference: &Inference, summary: &McSummary) -> Vec<Ellipse> {
    let horizon = scenario.problem.horizon;
    let stride = (horizon / 20).max(1);
    let mut out = Vec::new();
    for t in (0..=horizon).step_by(stride) {
        for &(i, j) in &scenario.positions() {
            match inference {
                Inference::Piic(r) => {
                    let m = r.moments.state_mean(t);
                    let c = r.moments.state_cov(t);
                    out.push(Ellipse {
                        center: [m[i], m[j]],
                        cov: [[c[(i, i)], c[(i, j)]], [c[(j, i)], c[(j, j)]]],
                    });
                }
                Inference::Ilqg(_) => {
                    let xs: Vec<f64> = summary.records.iter().map(|r| r.states[t][i]).collect();
                    let ys: Vec<f64> = summary.records.iter().map(|r| r.states[t][j]).collect();
                    let n = xs.len();
                    if n < 2 {
                        continue;
                    }
                    let (mx, _) = mean_std(&xs);
                    let (my, _) = mean_std(&ys);
                    let cov = |a: &[f64], ma: f64, b: &[f64], mb: f64| {
                        a.iter().zip(b).map(|(p, q)| (p - ma) * (q - mb)).sum::<f64>()
                            / (n - 1) as f64
                    };
                    let cxy = cov(&xs, mx, &ys, my);
                    out.push(Ellipse {
                        center: [mx, my],
                        cov: [[cov(&xs, mx, &xs, mx), cxy], [cxy, cov(&ys, my, &ys, my)]],
                    });
                }
            }
        }
    }
    out
}

/// Writes every artifact of a finished run into `dir`.
pub fn write_outputs(
    dir: &Path,
    scenario: &Scenario,
    inference: &Inference,
    summary: &McSummary,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let cfg = &scenario.config;
    let nx = scenario.problem.state_dim();
    let nu = scenario.problem.control_dim();
    let nc = scenario.evaluation.constraints.len();
    let file = SummaryFile {
        scenario: cfg.name.clone(),
        algorithm: cfg.algorithm.name().into(),
        base_seed: cfg.monte_carlo.base_seed,
        runs: summary.runs,
        completed_runs: summary.records.len(),
        mean_cost: summary.mean_cost,
        std_cost: summary.std_cost,
        std_degenerate: summary.std_degenerate,
        total_violations: summary.total_violations,
        violations_per_constraint: summary.violations_per_constraint.clone(),
        violating_runs: summary.violating_runs,
        diverged: summary.diverged.clone(),
        policy_noise: match scenario.policy_noise {
            PolicyNoise::Learned => "learned".into(),
            PolicyNoise::None => "none".into(),
        },
        obstacle_radius_scale: cfg.monte_carlo.obstacle_radius_scale,
        inference: InferenceSummary::of(inference),
    };
    output::write_summary(dir, &file)?;
    output::write_file(
        &dir.join(output::RUNS_FILE),
        output::runs_csv(summary, nx, nu, nc).as_bytes(),
    )?;
    output::write_file(
        &dir.join(output::ITERATIONS_FILE),
        output::iterations_csv(inference).as_bytes(),
    )?;
    output::write_file(
        &dir.join(output::TRAJECTORY_FILE),
        output::trajectory_csv(summary, nx, nu, scenario.problem.horizon).as_bytes(),
    )?;
    if cfg.output.emit_plots {
        let svg = output::plot_svg(
            summary,
            &scenario.evaluation,
            &scenario.positions(),
            &ellipses(scenario, inference, summary),
        );
        output::write_file(&dir.join(output::PLOT_FILE), svg.as_bytes())?;
    }
    Ok(())
}

/// Loads a scenario, infers a controller, evaluates it and writes the
/// artifacts.
pub fn run_scenario(config_path: &Path, overrides: &Overrides) -> Result<RunOutcome> {
    let scenario = Scenario::load(config_path, overrides)?;
    let out_dir = output_dir(&scenario.config, config_path);
    run_loaded(scenario, out_dir)
}

fn run_loaded(scenario: Scenario, out_dir: PathBuf) -> Result<RunOutcome> {
    let cfg = &scenario.config;
    info!(
        "scenario `{}`: {} with T = {}, {} Monte Carlo runs",
        cfg.name,
        cfg.algorithm.name(),
        cfg.horizon,
        cfg.monte_carlo.runs
    );
    let started = std::time::Instant::now();
    let inference = scenario.infer()?;
    info!("inference finished in {:.2?}", started.elapsed());
    let summary = scenario.evaluate(&inference)?;
    info!(
        "mean cost {:.4} ± {:.4}, {} violations, {} diverged",
        summary.mean_cost,
        summary.std_cost,
        summary.total_violations,
        summary.diverged.len()
    );
    write_outputs(&out_dir, &scenario, &inference, &summary)?;
    Ok(RunOutcome {
        scenario,
        inference,
        summary,
        out_dir,
    })
}

/// Parameters a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Gamma,
}

impl std::str::FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "gamma" => Ok(SweepParam::Gamma),
            other => Err(format!("unknown sweep parameter `{other}` (expected gamma)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub value: f64,
    pub mean_cost: f64,
    pub std_cost: f64,
    pub total_violations: usize,
    pub violating_runs: usize,
    pub diverged: usize,
}

/// Runs the scenario once per value, each into `<out>/<param>_<value>`,
/// and writes `sweep.csv` next to them.
pub fn sweep(
    config_path: &Path,
    overrides: &Overrides,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(PiicError::Validation("sweep needs at least one value".into()));
    }
    let mut cfg = ScenarioConfig::load(config_path)?;
    overrides.apply(&mut cfg);
    let root = output_dir(&cfg, config_path);
    let mut points = Vec::new();
    let mut csv = String::from("value,mean_cost,std_cost,total_violations,violating_runs,diverged\n");
    for &v in values {
        let run_overrides = match param {
            SweepParam::Gamma => Overrides {
                gamma: Some(v),
                ..Default::default()
            },
        };
        let mut c = cfg.clone();
        run_overrides.apply(&mut c);
        let scenario = Scenario::from_config(c)?;
        let outcome = run_loaded(scenario, root.join(format!("gamma_{v}")))?;
        let s = &outcome.summary;
        csv.push_str(&format!(
            "{v},{},{},{},{},{}\n",
            s.mean_cost,
            s.std_cost,
            s.total_violations,
            s.violating_runs,
            s.diverged.len()
        ));
        points.push(SweepPoint {
            value: v,
            mean_cost: s.mean_cost,
            std_cost: s.std_cost,
            total_violations: s.total_violations,
            violating_runs: s.violating_runs,
            diverged: s.diverged.len(),
        });
    }
    output::write_file(&root.join("sweep.csv"), csv.as_bytes())?;
    Ok(points)
}
