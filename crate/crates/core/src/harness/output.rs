//! Artifact files. Floats are written with the shortest representation that
//! round-trips, so identical runs produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::rollout::{DivergedRun, McSummary};
use super::Inference;
use crate::error::{PiicError, Result};
use crate::objective::{ConstraintKind, ObservationSpec};

pub const SUMMARY_FILE: &str = "summary.json";
pub const RUNS_FILE: &str = "runs.csv";
pub const ITERATIONS_FILE: &str = "iterations.csv";
pub const TRAJECTORY_FILE: &str = "trajectory_mean.csv";
pub const PLOT_FILE: &str = "plot.svg";
pub const ERROR_FILE: &str = "error.json";

#[derive(Debug, Clone, Serialize)]
pub struct InferenceSummary {
    pub converged: bool,
    pub iterations: usize,
    /// Final `alpha` (PIIC only).
    pub alpha: Option<f64>,
    /// Cost of the final nominal or smoothed mean trajectory.
    pub final_cost: f64,
}

impl InferenceSummary {
    pub fn of(inference: &Inference) -> Self {
        match inference {
            Inference::Piic(r) => Self {
                converged: r.converged,
                iterations: r.log.len(),
                alpha: Some(r.alpha),
                final_cost: r.log.last().map(|l| l.mean_cost).unwrap_or(f64::NAN),
            },
            Inference::Ilqg(r) => Self {
                converged: r.converged,
                iterations: r.cost_history.len() - 1,
                alpha: None,
                final_cost: *r.cost_history.last().unwrap_or(&f64::NAN),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryFile {
    pub scenario: String,
    pub algorithm: String,
    pub base_seed: u64,
    pub runs: usize,
    pub completed_runs: usize,
    pub mean_cost: f64,
    pub std_cost: f64,
    pub std_degenerate: bool,
    pub total_violations: usize,
    pub violations_per_constraint: Vec<usize>,
    pub violating_runs: usize,
    pub diverged: Vec<DivergedRun>,
    pub policy_noise: String,
    pub obstacle_radius_scale: f64,
    pub inference: InferenceSummary,
}

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(contents)?;
    Ok(())
}

pub fn write_summary(dir: &Path, summary: &SummaryFile) -> Result<()> {
    let json = serde_json::to_string_pretty(summary)
        .map_err(|e| PiicError::Validation(format!("cannot serialize summary: {e}")))?;
    write_file(&dir.join(SUMMARY_FILE), (json + "\n").as_bytes())
}

fn push_row(out: &mut String, cells: &[String]) {
    out.push_str(&cells.join(","));
    out.push('\n');
}

fn float(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// `run,t,x0..,u0..,stage_cost,K1..`; controls are empty at `t = T`.
pub fn runs_csv(summary: &McSummary, nx: usize, nu: usize, n_constraints: usize) -> String {
    let mut out = String::new();
    let mut header = vec!["run".to_string(), "t".to_string()];
    header.extend((0..nx).map(|i| format!("x{i}")));
    header.extend((0..nu).map(|i| format!("u{i}")));
    header.push("stage_cost".into());
    header.extend((1..=n_constraints).map(|j| format!("K{j}")));
    push_row(&mut out, &header);
    for r in &summary.records {
        for (t, x) in r.states.iter().enumerate() {
            let mut row = vec![r.run.to_string(), t.to_string()];
            row.extend(x.iter().map(|v| float(*v)));
            match r.controls.get(t) {
                Some(u) => row.extend(u.iter().map(|v| float(*v))),
                None => row.extend((0..nu).map(|_| String::new())),
            }
            row.push(float(r.stage_costs[t]));
            row.extend(r.constraint_values[t].iter().map(|v| float(*v)));
            push_row(&mut out, &row);
        }
    }
    out
}

pub fn iterations_csv(inference: &Inference) -> String {
    let mut out = String::new();
    match inference {
        Inference::Piic(r) => {
            out.push_str("iteration,alpha,surrogate_before,surrogate_after,state_change,mean_cost,smoother_warning\n");
            for l in &r.log {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    l.iteration,
                    float(l.alpha),
                    float(l.surrogate_before),
                    float(l.surrogate_after),
                    float(l.state_change),
                    float(l.mean_cost),
                    l.smoother_warning
                );
            }
        }
        Inference::Ilqg(r) => {
            out.push_str("iteration,cost\n");
            for (i, c) in r.cost_history.iter().enumerate() {
                let _ = writeln!(out, "{i},{}", float(*c));
            }
        }
    }
    out
}

/// Per-step Monte Carlo mean and standard deviation of states and controls.
pub fn trajectory_csv(summary: &McSummary, nx: usize, nu: usize, horizon: usize) -> String {
    let mut out = String::new();
    let mut header = vec!["t".to_string()];
    header.extend((0..nx).map(|i| format!("mean_x{i}")));
    header.extend((0..nx).map(|i| format!("std_x{i}")));
    header.extend((0..nu).map(|i| format!("mean_u{i}")));
    header.extend((0..nu).map(|i| format!("std_u{i}")));
    push_row(&mut out, &header);
    let recs = &summary.records;
    let stats = |vals: Vec<&DVector<f64>>, n: usize| -> (Vec<f64>, Vec<f64>) {
        (0..n)
            .map(|i| super::rollout::mean_std(&vals.iter().map(|v| v[i]).collect::<Vec<_>>()))
            .unzip()
    };
    for t in 0..=horizon {
        let (mx, sx) = stats(recs.iter().map(|r| &r.states[t]).collect(), nx);
        let mut row = vec![t.to_string()];
        row.extend(mx.iter().chain(&sx).map(|v| float(*v)));
        if t < horizon {
            let (mu, su) = stats(recs.iter().map(|r| &r.controls[t]).collect(), nu);
            row.extend(mu.iter().chain(&su).map(|v| float(*v)));
        } else {
            row.extend((0..2 * nu).map(|_| String::new()));
        }
        push_row(&mut out, &row);
    }
    out
}

/// Position marginal used for a covariance ellipse.
pub struct Ellipse {
    pub center: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

fn ellipse_path(e: &Ellipse, sigmas: f64) -> Vec<[f64; 2]> {
    let m = DMatrix::from_row_slice(2, 2, &[e.cov[0][0], e.cov[0][1], e.cov[1][0], e.cov[1][1]]);
    let eig = nalgebra::SymmetricEigen::new(m);
    let (a, b) = (
        eig.eigenvalues[0].max(0.0).sqrt() * sigmas,
        eig.eigenvalues[1].max(0.0).sqrt() * sigmas,
    );
    let v = eig.eigenvectors;
    (0..=32)
        .map(|k| {
            let th = k as f64 / 32.0 * std::f64::consts::TAU;
            let (c, s) = (a * th.cos(), b * th.sin());
            [
                e.center[0] + v[(0, 0)] * c + v[(0, 1)] * s,
                e.center[1] + v[(1, 0)] * c + v[(1, 1)] * s,
            ]
        })
        .collect()
}

/// Top view of the Monte Carlo paths, obstacles and 2-sigma ellipses for
/// every `(x, y)` position pair in `positions`.
pub fn plot_svg(
    summary: &McSummary,
    spec: &ObservationSpec,
    positions: &[(usize, usize)],
    ellipses: &[Ellipse],
) -> String {
    let mut pts: Vec<[f64; 2]> = Vec::new();
    for r in &summary.records {
        for x in &r.states {
            for &(i, j) in positions {
                pts.push([x[i], x[j]]);
            }
        }
    }
    let circles: Vec<([f64; 2], f64)> = spec
        .constraints
        .iter()
        .filter_map(|c| match c.kind {
            ConstraintKind::Obstacle { center, radius, .. } => Some((center, radius)),
            _ => None,
        })
        .collect();
    for (c, r) in &circles {
        pts.push([c[0] - r, c[1] - r]);
        pts.push([c[0] + r, c[1] + r]);
    }
    let paths: Vec<Vec<[f64; 2]>> = ellipses.iter().map(|e| ellipse_path(e, 2.0)).collect();
    pts.extend(paths.iter().flatten());
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in &pts {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    if !lo[0].is_finite() {
        lo = [0.0, 0.0];
        hi = [1.0, 1.0];
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9) * 1.1;
    let mid = [(hi[0] + lo[0]) / 2.0, (hi[1] + lo[1]) / 2.0];
    let size = 600.0;
    let sx = |p: [f64; 2]| {
        (
            (p[0] - mid[0]) / span * size + size / 2.0,
            size / 2.0 - (p[1] - mid[1]) / span * size,
        )
    };
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    for (c, r) in &circles {
        let (cx, cy) = sx(*c);
        let _ = writeln!(
            out,
            "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"{:.2}\" fill=\"#d62728\" fill-opacity=\"0.3\" stroke=\"#d62728\"/>",
            r / span * size
        );
    }
    let polyline = |out: &mut String, p: &[[f64; 2]], style: &str| {
        let coords: Vec<String> = p
            .iter()
            .map(|q| {
                let (a, b) = sx(*q);
                format!("{a:.2},{b:.2}")
            })
            .collect();
        let _ = writeln!(out, "<polyline points=\"{}\" fill=\"none\" {style}/>", coords.join(" "));
    };
    for r in &summary.records {
        for &(i, j) in positions {
            let p: Vec<[f64; 2]> = r.states.iter().map(|x| [x[i], x[j]]).collect();
            polyline(&mut out, &p, "stroke=\"#1f77b4\" stroke-opacity=\"0.35\" stroke-width=\"1\"");
        }
    }
    for p in &paths {
        polyline(&mut out, p, "stroke=\"#2ca02c\" stroke-width=\"1\"");
    }
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Serialize)]
struct ErrorIssue<'a> {
    path: &'a str,
    message: &'a str,
}

#[derive(Debug, Serialize)]
struct ErrorReport<'a> {
    error: String,
    issues: Vec<ErrorIssue<'a>>,
}

/// Machine-readable failure report.
pub fn error_json(err: &PiicError) -> String {
    let issues = match err {
        PiicError::Config(list) => list
            .iter()
            .map(|i| ErrorIssue {
                path: &i.path,
                message: &i.message,
            })
            .collect(),
        _ => Vec::new(),
    };
    let report = ErrorReport {
        error: err.to_string(),
        issues,
    };
    serde_json::to_string_pretty(&report).unwrap_or_else(|_| "{}".into()) + "\n"
}
