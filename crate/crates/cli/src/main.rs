use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use piic::harness::{self, output, Algorithm, Overrides, Scenario, ScenarioConfig, SweepParam};
use piic::PiicError;

/// Infer and evaluate constrained, structured stochastic controllers.
#[derive(Debug, Parser)]
#[command(name = "piic", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Infer a controller and evaluate it by Monte Carlo simulation.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        algorithm: Option<Algorithm>,
        /// Base seed for the Monte Carlo runs.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mc_runs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        emit_plots: bool,
    },
    /// Check a scenario file and list every problem found.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Repeat a run for several values of one parameter.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        algorithm: Option<Algorithm>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mc_runs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("PIIC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .map_err(|_| format!("PIIC_THREADS must be a positive integer, got `{v}`"))?;
    if n == 0 {
        return Err("PIIC_THREADS must be a positive integer, got `0`".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

/// Prints the report and, when the output directory is known, writes it
/// there as `error.json`.
fn report(err: &PiicError, out_dir: Option<&Path>) -> ExitCode {
    let json = output::error_json(err);
    eprint!("{json}");
    if let Some(dir) = out_dir {
        if std::fs::create_dir_all(dir).is_ok() {
            if let Err(e) = std::fs::write(dir.join(output::ERROR_FILE), &json) {
                error!("could not write error report: {e}");
            }
        }
    }
    match err {
        PiicError::Config(_) => ExitCode::from(EXIT_CONFIG),
        _ => ExitCode::from(EXIT_FAILURE),
    }
}

/// Output directory when it can be determined without a valid scenario.
fn known_out_dir(config: &Path, overrides: &Overrides) -> Option<PathBuf> {
    if let Some(o) = &overrides.out {
        return Some(o.clone());
    }
    let cfg = ScenarioConfig::load(config).ok()?;
    Some(harness::output_dir(&cfg, config))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = configure_threads() {
        eprintln!("{e}");
        return ExitCode::from(EXIT_FAILURE);
    }
    match Cli::parse().command {
        Command::Run {
            config,
            algorithm,
            seed,
            mc_runs,
            out,
            emit_plots,
        } => {
            let overrides = Overrides {
                algorithm,
                seed,
                mc_runs,
                out,
                emit_plots,
                gamma: None,
            };
            match harness::run_scenario(&config, &overrides) {
                Ok(outcome) => {
                    let s = &outcome.summary;
                    println!(
                        "{}: mean cost {} ± {}, violations {}, diverged {} -> {}",
                        outcome.scenario.config.name,
                        s.mean_cost,
                        s.std_cost,
                        s.total_violations,
                        s.diverged.len(),
                        outcome.out_dir.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => report(&e, known_out_dir(&config, &overrides).as_deref()),
            }
        }
        Command::Validate { config } => {
            match Scenario::load(&config, &Overrides::default()) {
                Ok(s) => {
                    println!(
                        "{}: ok ({} states, {} controls, {} constraints, T = {})",
                        s.config.name,
                        s.problem.state_dim(),
                        s.problem.control_dim(),
                        s.problem.observation.constraints.len(),
                        s.problem.horizon
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => report(&e, None),
            }
        }
        Command::Sweep {
            config,
            param,
            values,
            algorithm,
            seed,
            mc_runs,
            out,
        } => {
            let overrides = Overrides {
                algorithm,
                seed,
                mc_runs,
                out,
                ..Default::default()
            };
            match harness::sweep(&config, &overrides, param, &values) {
                Ok(points) => {
                    for p in points {
                        println!(
                            "gamma = {}: mean cost {} ± {}, violations {}",
                            p.value, p.mean_cost, p.std_cost, p.total_violations
                        );
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => report(&e, known_out_dir(&config, &overrides).as_deref()),
            }
        }
    }
}
