//! Acceptance criteria. Each criterion prints one PASS or FAIL line and the
//! binary exits non-zero when any of them fails.

mod common;

use std::error::Error;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{
    affine_moments, linear_case, lqr_problem, posterior_errors, random_matrix, random_pd,
    random_vector, riccati_tracking, rng,
};
use nalgebra::{DMatrix, DVector};
use piic::basis::AffineBasis;
use piic::em::{
    run_piic, run_piic_observed, update_sigma_delta, update_theta_ti, update_theta_tv, EmOptions,
};
use piic::harness::{self, output, Algorithm, McSummary, Overrides, Scenario};
use piic::policy::ControllerParams;
use piic::smoother::{smooth_map, smooth_unscented, BasisMoments, GaussNewtonConfig, SigmaPointConfig};
use rand::Rng;

type Check = Result<Outcome, Box<dyn Error>>;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Check {
        Ok(Self { pass, detail })
    }
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"))
}

const BUNDLED: [&str; 9] = [
    "unicycle_obstacle",
    "unicycle_target",
    "unicycle_gamma_sweep",
    "formation_centralized",
    "formation_3agent",
    "formation_2agent",
    "formation_decentralized",
    "quadcopter_lwb",
    "quadcopter_oa",
];

fn evaluate(name: &str, overrides: &Overrides) -> Result<(Scenario, McSummary), Box<dyn Error>> {
    let s = Scenario::load(&scenario(name), overrides)?;
    let inference = s.infer()?;
    let summary = s.evaluate(&inference)?;
    Ok((s, summary))
}

fn with_algorithm(a: Algorithm) -> Overrides {
    Overrides {
        algorithm: Some(a),
        ..Default::default()
    }
}

fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let mut blocks = Vec::new();
    let mut ab = b.clone();
    for _ in 0..n {
        blocks.push(ab.clone());
        ab = a * ab;
    }
    let cols: Vec<_> = blocks.iter().flat_map(|m| m.column_iter().map(|c| c.into_owned())).collect();
    DMatrix::from_columns(&cols).rank(1e-9)
}

fn lqr_equivalence() -> Check {
    let (problem, a, b, cost) = lqr_problem(42);
    let rank = controllability_rank(&a, &b);
    let init = ControllerParams::initial(
        Arc::new(AffineBasis),
        4,
        &DVector::zeros(2),
        &(DMatrix::identity(2, 2) * 1e4),
        50,
        4,
    )?;
    let start = Instant::now();
    let res = run_piic(&problem, init, &EmOptions::default())?;
    let elapsed = start.elapsed();
    let oracle = riccati_tracking(&a, &b, &cost, 50);
    let (mut ek, mut eo) = (0.0f64, 0.0f64);
    for (t, (k_ref, o_ref)) in oracle.iter().enumerate() {
        let th = &res.params.gains[t];
        ek = ek.max((th.rows(0, 4).transpose() - k_ref).amax());
        eo = eo.max((th.row(4).transpose() - o_ref).amax());
    }
    Outcome::new(
        rank == 4 && ek <= 1e-3 && eo <= 1e-3 && elapsed < Duration::from_secs(10),
        format!(
            "controllability rank {rank}, max gain error {ek:.2e}, max offset error {eo:.2e}, {} EM iterations in {elapsed:.2?}",
            res.log.len()
        ),
    )
}

fn i2c_equivalence() -> Check {
    let mut r = rng(2);
    let start = Instant::now();
    let (mut ek, mut eo, mut es) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let nx = r.random_range(1..=5);
        let nu = r.random_range(1..=3);
        let joint = random_pd(&mut r, nx + nu, 1.0, 0.5);
        let sx = joint.view((0, 0), (nx, nx)).into_owned();
        let sxu = joint.view((0, nx), (nx, nu)).into_owned();
        let su = joint.view((nx, nx), (nu, nu)).into_owned();
        let mx = random_vector(&mut r, nx, 2.0);
        let mu = random_vector(&mut r, nu, 2.0);
        let m = affine_moments(&mx, &sx, &mu, &su, &sxu);
        let theta = update_theta_tv(std::slice::from_ref(&m), 0.0)?;
        let sigma = update_sigma_delta(&[m], &theta, false, false)?;

        let sx_inv = sx.clone().cholesky().ok_or("joint covariance is not PD")?.inverse();
        let k = sxu.transpose() * &sx_inv;
        let off = &mu - &k * &mx;
        let sd = &su - &k * &sxu;
        ek = ek.max((theta[0].rows(0, nx).transpose() - &k).amax());
        eo = eo.max((theta[0].row(nx).transpose() - off).amax());
        es = es.max((&sigma[0] - sd).amax());
    }
    let elapsed = start.elapsed();
    Outcome::new(
        ek <= 1e-10 && eo <= 1e-10 && es <= 1e-10 && elapsed < Duration::from_secs(5),
        format!("1000 draws: K error {ek:.2e}, k error {eo:.2e}, Sigma_delta error {es:.2e} in {elapsed:.2?}"),
    )
}

fn kl_minimizer() -> Check {
    let mut r = rng(3);
    let mut err = 0.0f64;
    for _ in 0..200 {
        let nb = r.random_range(2..=7);
        let nu = r.random_range(1..=4);
        let steps = r.random_range(1..=12);
        let moments: Vec<BasisMoments> = (0..steps)
            .map(|_| BasisMoments {
                bb: random_pd(&mut r, nb, 1.0, 0.3),
                bu: random_matrix(&mut r, nb, nu, 1.0),
                uu: random_pd(&mut r, nu, 1.0, 0.3),
            })
            .collect();
        let theta = update_theta_ti(&moments, 0.0)?;
        let bb = moments.iter().fold(DMatrix::zeros(nb, nb), |acc, m| acc + &m.bb);
        let bu = moments.iter().fold(DMatrix::zeros(nb, nu), |acc, m| acc + &m.bu);
        let oracle = bb.lu().solve(&bu).ok_or("summed E[B B^T] is singular")?;
        err = err.max((theta - oracle).amax());
    }
    Outcome::new(err <= 1e-12, format!("200 random moment sums, max error {err:.2e}"))
}

fn smoother_oracle() -> Check {
    let (mut ukf_m, mut ukf_c, mut map_m, mut map_c) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for seed in 100..120 {
        let case = linear_case(seed, 3, 2, 30);
        let u = smooth_unscented(&case.problem, &case.params, case.alpha, &SigmaPointConfig::default())?;
        let (m, c) = posterior_errors(&case, &u);
        ukf_m = ukf_m.max(m);
        ukf_c = ukf_c.max(c);
        let g = smooth_map(
            &case.problem,
            &case.params,
            case.alpha,
            &GaussNewtonConfig::default(),
            &SigmaPointConfig::default(),
            None,
        )?;
        let (m, c) = posterior_errors(&case, &g);
        map_m = map_m.max(m);
        map_c = map_c.max(c);
    }
    Outcome::new(
        ukf_m <= 1e-8 && map_m <= 1e-8 && ukf_c <= 1e-6 && map_c <= 1e-6,
        format!(
            "20 problems, T = 30: unscented mean {ukf_m:.2e} cov {ukf_c:.2e}, MAP mean {map_m:.2e} cov {map_c:.2e}"
        ),
    )
}

fn surrogate_monotonicity() -> Check {
    let mut pass = true;
    let mut parts = Vec::new();
    for a in [Algorithm::Fgpiic, Algorithm::Upiic] {
        let s = Scenario::load(&scenario("unicycle_obstacle"), &with_algorithm(a))?;
        let res = run_piic(&s.problem, s.initial_params.clone(), &s.em)?;
        let worst = res
            .log
            .iter()
            .map(|l| l.surrogate_after - l.surrogate_before)
            .fold(f64::INFINITY, f64::min);
        pass &= worst >= -1e-8;
        parts.push(format!("{}: {} iterations, smallest gain {worst:.3e}", a.name(), res.log.len()));
    }
    Outcome::new(pass, parts.join("; "))
}

fn structure_preservation() -> Check {
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["formation_3agent", "formation_2agent", "formation_decentralized"] {
        let s = Scenario::load(&scenario(name), &Overrides::default())?;
        let mask = s.initial_params.mask.clone().ok_or("scenario has no structure")?;
        let mut checked = 0usize;
        let mut broken = 0usize;
        let respected = |p: &ControllerParams| p.gains.iter().filter(|g| !mask.is_respected_by(g)).count();
        broken += respected(&s.initial_params);
        let res = run_piic_observed(&s.problem, s.initial_params.clone(), &s.em, |_, p| {
            checked += 1;
            broken += respected(p);
        })?;
        broken += respected(&res.params);
        pass &= broken == 0 && checked == res.log.len();
        parts.push(format!("{name}: {checked} iterations, {broken} gains off-mask"));
    }
    Outcome::new(pass, parts.join("; "))
}

fn cost_ordering() -> Check {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for name in ["unicycle_obstacle", "unicycle_target"] {
        let mut stats = Vec::new();
        for a in [Algorithm::Fgpiic, Algorithm::Upiic, Algorithm::Ilqg] {
            let (s, m) = evaluate(name, &with_algorithm(a))?;
            pass &= s.config.horizon == 200 && m.runs == 50 && m.diverged.is_empty();
            stats.push((a, m.mean_cost, m.std_cost));
        }
        let (f, u, i) = (stats[0], stats[1], stats[2]);
        pass &= f.1 < u.1 && u.1 < i.1 && f.2 < i.2;
        parts.push(format!(
            "{name}: fgpiic {:.2} ± {:.2}, upiic {:.2} ± {:.2}, ilqg {:.2} ± {:.2}",
            f.1, f.2, u.1, u.2, i.1, i.2
        ));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(600);
    parts.push(format!("{elapsed:.2?}"));
    Outcome::new(pass, parts.join("; "))
}

fn gamma_endpoints() -> Check {
    let run = |g: f64| {
        evaluate(
            "unicycle_gamma_sweep",
            &Overrides {
                gamma: Some(g),
                ..Default::default()
            },
        )
    };
    let (_, low) = run(1.0)?;
    let (_, high) = run(10.0)?;
    let (v1, v10) = (low.total_violations, high.total_violations);
    Outcome::new(
        v1 > 0 && v10 == 0 && v10 < v1 && low.runs == 50,
        format!("violations over 50 runs: gamma 1 -> {v1}, gamma 10 -> {v10}"),
    )
}

fn formation_ordering() -> Check {
    let names = [
        ("formation_centralized", 664.67),
        ("formation_3agent", 713.21),
        ("formation_2agent", 728.88),
        ("formation_decentralized", 749.22),
    ];
    let mut means = Vec::new();
    let mut parts = Vec::new();
    for (name, reference) in names {
        let (_, m) = evaluate(name, &Overrides::default())?;
        let within = (m.mean_cost - reference).abs() <= 0.3 * reference;
        parts.push(format!(
            "{name} {:.2} ± {:.2} (reference {reference}, {})",
            m.mean_cost,
            m.std_cost,
            if within { "within 30%" } else { "outside 30%" }
        ));
        means.push(m.mean_cost);
    }
    let ordered = means.windows(2).all(|w| w[0] <= w[1]);
    let strict = means[1..].iter().all(|m| means[0] < *m);
    Outcome::new(ordered && strict, parts.join("; "))
}

fn basis_robustness() -> Check {
    let (lwb_s, lwb) = evaluate("quadcopter_lwb", &Overrides::default())?;
    let (oa_s, oa) = evaluate("quadcopter_oa", &Overrides::default())?;
    let same_seeds = lwb_s.config.monte_carlo.base_seed == oa_s.config.monte_carlo.base_seed
        && lwb.runs == oa.runs;
    let scale = oa_s.config.monte_carlo.obstacle_radius_scale;
    let enlarged = scale > 1.0 && lwb_s.config.monte_carlo.obstacle_radius_scale == scale;
    Outcome::new(
        same_seeds && enlarged && oa.total_violations < lwb.total_violations,
        format!(
            "radii x{scale} at simulation: LWB {} violations, OA {} violations",
            lwb.total_violations, oa.total_violations
        ),
    )
}

fn reproducibility() -> Check {
    let dir = tempfile::tempdir()?;
    let mut identical = 0;
    let mut differing = Vec::new();
    for name in BUNDLED {
        let mut bytes = Vec::new();
        for rep in 0..2 {
            let out = dir.path().join(format!("{name}_{rep}"));
            let overrides = Overrides {
                out: Some(out.clone()),
                ..Default::default()
            };
            harness::run_scenario(&scenario(name), &overrides)?;
            bytes.push(std::fs::read(out.join(output::RUNS_FILE))?);
        }
        if bytes[0] == bytes[1] && !bytes[0].is_empty() {
            identical += 1;
        } else {
            differing.push(name);
        }
    }
    Outcome::new(
        differing.is_empty(),
        format!(
            "{identical}/{} scenarios byte-identical{}",
            BUNDLED.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!(", differing: {}", differing.join(", "))
            }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Check); 11] = [
        ("LQR equivalence", lqr_equivalence),
        ("I2C formula equivalence", i2c_equivalence),
        ("time-invariant KL minimizer", kl_minimizer),
        ("smoother oracle", smoother_oracle),
        ("EM surrogate monotonicity", surrogate_monotonicity),
        ("structure preservation", structure_preservation),
        ("unicycle cost ordering", cost_ordering),
        ("gamma sweep endpoints", gamma_endpoints),
        ("formation cost ordering", formation_ordering),
        ("quadcopter basis robustness", basis_robustness),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let outcome = check().unwrap_or_else(|e| Outcome {
            pass: false,
            detail: format!("error: {e}"),
        });
        if !outcome.pass {
            failed += 1;
        }
        println!(
            "{} criterion {:>2} {name}: {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            i + 1,
            outcome.detail
        );
    }
    println!("{} of {} acceptance criteria passed", 11 - failed, 11);
    if failed > 0 {
        std::process::exit(1);
    }
}
