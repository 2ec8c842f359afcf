use std::path::{Path, PathBuf};

use piic::harness::config::ScenarioConfig;
use piic::harness::output::{
    ITERATIONS_FILE, PLOT_FILE, RUNS_FILE, SUMMARY_FILE, TRAJECTORY_FILE,
};
use piic::harness::{self, mean_std, Algorithm, Overrides, Scenario, SweepParam};
use piic::PiicError;

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"))
}

fn quick(out: &Path) -> Overrides {
    Overrides {
        mc_runs: Some(6),
        out: Some(out.to_path_buf()),
        ..Default::default()
    }
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(SUMMARY_FILE)).unwrap()).unwrap()
}

fn config_issues(err: PiicError) -> Vec<(String, String)> {
    match err {
        PiicError::Config(list) => list.into_iter().map(|i| (i.path, i.message)).collect(),
        other => panic!("expected a configuration error, got {other}"),
    }
}

#[test]
fn bundled_scenario_emits_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let overrides = Overrides {
        emit_plots: true,
        ..quick(dir.path())
    };
    let outcome = harness::run_scenario(&scenario("unicycle_obstacle"), &overrides).unwrap();
    for f in [SUMMARY_FILE, RUNS_FILE, ITERATIONS_FILE, TRAJECTORY_FILE, PLOT_FILE] {
        let path = dir.path().join(f);
        assert!(path.is_file(), "{f} missing");
        assert!(std::fs::metadata(&path).unwrap().len() > 0, "{f} is empty");
    }
    assert_eq!(outcome.summary.runs, 6);
    let s = summary(dir.path());
    assert_eq!(s["algorithm"], "fgpiic");
    assert_eq!(s["completed_runs"], 6);
    let svg = std::fs::read_to_string(dir.path().join(PLOT_FILE)).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<circle"));
}

#[test]
fn algorithm_override_swaps_the_solver() {
    let dir = tempfile::tempdir().unwrap();
    let overrides = Overrides {
        algorithm: Some(Algorithm::Ilqg),
        ..quick(dir.path())
    };
    harness::run_scenario(&scenario("unicycle_obstacle"), &overrides).unwrap();
    let s = summary(dir.path());
    assert_eq!(s["algorithm"], "ilqg");
    assert_eq!(s["policy_noise"], "none");
    assert!(s["inference"]["alpha"].is_null());
    let log = std::fs::read_to_string(dir.path().join(ITERATIONS_FILE)).unwrap();
    assert!(log.starts_with("iteration,cost\n"));
}

#[test]
fn summary_matches_the_per_run_table() {
    let dir = tempfile::tempdir().unwrap();
    harness::run_scenario(&scenario("unicycle_gamma_sweep"), &quick(dir.path())).unwrap();
    let table = std::fs::read_to_string(dir.path().join(RUNS_FILE)).unwrap();
    let mut lines = table.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "stage_cost").unwrap();
    let k_cols: Vec<usize> = (0..header.len()).filter(|i| header[*i].starts_with('K')).collect();
    let mut costs = vec![0.0; 6];
    let mut violations = 0;
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let run: usize = cells[0].parse().unwrap();
        costs[run] += cells[col].parse::<f64>().unwrap();
        violations += k_cols
            .iter()
            .filter(|c| !cells[**c].is_empty() && cells[**c].parse::<f64>().unwrap() <= 0.0)
            .count();
    }
    let (mean, std) = mean_std(&costs);
    let s = summary(dir.path());
    assert!((s["mean_cost"].as_f64().unwrap() - mean).abs() <= 1e-9);
    assert!((s["std_cost"].as_f64().unwrap() - std).abs() <= 1e-9);
    assert_eq!(s["total_violations"].as_u64().unwrap() as usize, violations);
}

#[test]
fn same_seed_gives_identical_bytes_and_other_seeds_differ() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str, seed: u64| {
        let out = dir.path().join(sub);
        let overrides = Overrides {
            seed: Some(seed),
            ..quick(&out)
        };
        harness::run_scenario(&scenario("unicycle_target"), &overrides).unwrap();
        std::fs::read(out.join(RUNS_FILE)).unwrap()
    };
    let a = run("a", 7);
    let b = run("b", 7);
    let c = run("c", 8);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn sweep_writes_one_folder_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let points = harness::sweep(
        &scenario("unicycle_gamma_sweep"),
        &quick(dir.path()),
        SweepParam::Gamma,
        &[1.0, 10.0],
    )
    .unwrap();
    assert_eq!(points.len(), 2);
    for v in ["gamma_1", "gamma_10"] {
        assert!(dir.path().join(v).join(SUMMARY_FILE).is_file());
    }
    let table = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.starts_with("value,mean_cost,std_cost,total_violations"));
}

const MINIMAL: &str = r#"
name = "minimal"
algorithm = "fgpiic"
horizon = 20

[model]
type = "unicycle"
dt = 0.05
process_noise = 1e-4

[initial_state]
mean = [0.0, 0.0, 0.0]
cov = 1e-4

[cost]
q = 1.0
r = 0.5
x_target = [1.0, 0.0, 0.0]
q_terminal = 10.0

[[obstacles]]
center = [0.5, 0.2]
radius = 0.1

[policy]
initial_control_mean = [0.0, 0.0]
initial_covariance = 10.0
"#;

#[test]
fn minimal_scenario_loads() {
    let cfg = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
    let s = Scenario::from_config(cfg).unwrap();
    assert_eq!(s.problem.horizon, 20);
    assert_eq!(s.problem.observation.constraints.len(), 1);
}

#[test]
fn missing_radius_names_the_key_path() {
    let text = MINIMAL.replace("radius = 0.1\n", "");
    let issues = config_issues(ScenarioConfig::from_toml_str(&text).unwrap_err());
    assert_eq!(issues.len(), 1);
    assert_eq!(issues[0].0, "obstacles[0].radius");
}

#[test]
fn validation_lists_every_problem() {
    let text = MINIMAL
        .replace("horizon = 20", "horizon = 0")
        .replace("radius = 0.1", "radius = -0.1")
        .replace("x_target = [1.0, 0.0, 0.0]", "x_target = [1.0, 0.0]");
    let cfg = ScenarioConfig::from_toml_str(&text).unwrap();
    let issues = config_issues(Scenario::from_config(cfg).unwrap_err());
    let paths: Vec<&str> = issues.iter().map(|i| i.0.as_str()).collect();
    for p in ["horizon", "obstacles[0].radius", "cost.x_target"] {
        assert!(paths.contains(&p), "{p} not reported in {paths:?}");
    }
}

#[test]
fn unknown_keys_are_rejected() {
    let text = MINIMAL.replace("horizon = 20", "horizon = 20\nhorizn = 3");
    let issues = config_issues(ScenarioConfig::from_toml_str(&text).unwrap_err());
    assert!(issues[0].1.contains("horizn"));
}
