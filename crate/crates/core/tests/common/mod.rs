//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use piic::basis::AffineBasis;
use piic::dynamics::{LinearModel, ProcessNoise};
use piic::objective::{ObservationSpec, QuadraticStageCost};
use piic::policy::ControllerParams;
use piic::smoother::{BasisMoments, TrajectoryMoments};
use piic::problem::ControlProblem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// `A A^T + floor I` with `A` uniform in `[-scale, scale]`.
pub fn random_pd(rng: &mut ChaCha8Rng, n: usize, scale: f64, floor: f64) -> DMatrix<f64> {
    let a = random_matrix(rng, n, n, scale);
    &a * a.transpose() + DMatrix::identity(n, n) * floor
}

/// A linear-Gaussian problem with an affine policy and its parameters.
pub struct LinearCase {
    pub problem: ControlProblem,
    pub params: ControllerParams,
    pub alpha: f64,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DVector<f64>,
    pub noise: DMatrix<f64>,
}

pub fn linear_case(seed: u64, nx: usize, nu: usize, horizon: usize) -> LinearCase {
    let mut r = rng(seed);
    let a = DMatrix::identity(nx, nx) * 0.9 + random_matrix(&mut r, nx, nx, 0.15);
    let b = random_matrix(&mut r, nx, nu, 0.5);
    let c = random_vector(&mut r, nx, 0.1);
    let noise = random_pd(&mut r, nx, 0.2, 0.02);
    let model = LinearModel::with_offset(
        a.clone(),
        b.clone(),
        c.clone(),
        ProcessNoise::new(noise.clone()).unwrap(),
    )
    .unwrap();
    let cost = QuadraticStageCost {
        q: random_pd(&mut r, nx, 0.5, 0.1),
        r: random_pd(&mut r, nu, 0.3, 0.05),
        x_target: random_vector(&mut r, nx, 1.0),
        u_target: random_vector(&mut r, nu, 0.2),
        q_terminal: random_pd(&mut r, nx, 1.0, 0.5),
        x_target_terminal: random_vector(&mut r, nx, 1.0),
    };
    let spec = ObservationSpec::new(cost, vec![], None).unwrap();
    let problem = ControlProblem::new(
        Arc::new(model),
        spec,
        horizon,
        random_vector(&mut r, nx, 1.0),
        random_pd(&mut r, nx, 0.5, 0.05),
    )
    .unwrap();
    let mut params = ControllerParams::initial(
        Arc::new(AffineBasis),
        nx,
        &DVector::zeros(nu),
        &DMatrix::identity(nu, nu),
        horizon,
        nx,
    )
    .unwrap();
    for t in 0..horizon {
        params.gains[t] = random_matrix(&mut r, nx + 1, nu, 0.4);
        params.noise[t] = random_pd(&mut r, nu, 0.5, 0.1);
    }
    let alpha = r.random_range(0.5..2.0);
    LinearCase {
        problem,
        params,
        alpha,
        a,
        b,
        c,
        noise,
    }
}

/// Exact posterior over `z = (tau_0, ..., tau_{T-1}, x_T)` by dense
/// Gaussian conditioning: the prior is built as an explicit affine map of
/// independent noises, the cost terms enter as linear observations
/// `z*_t = h(tau_t) + v_t`, `v_t ~ N(0, (alpha Gamma_t)^{-1})`.
pub fn dense_posterior(case: &LinearCase) -> (DVector<f64>, DMatrix<f64>) {
    let p = &case.problem;
    let nx = p.state_dim();
    let nu = p.control_dim();
    let nt = nx + nu;
    let t_end = p.horizon;
    let n = nt * t_end + nx;
    let n_eps = nx + t_end * (nu + nx);

    // every variable as mean + coeff * eps
    let mut mean = DVector::zeros(n);
    let mut coeff = DMatrix::zeros(n, n_eps);
    let chol = |m: &DMatrix<f64>| m.clone().cholesky().unwrap().l();

    let mut x_mean = p.x0_mean.clone();
    let mut x_coeff = DMatrix::zeros(nx, n_eps);
    x_coeff
        .view_mut((0, 0), (nx, nx))
        .copy_from(&chol(&p.x0_cov));
    let mut eps_off = nx;
    for t in 0..t_end {
        let theta = &case.params.gains[t];
        let k = theta.rows(0, nx).transpose();
        let off = theta.row(nx).transpose();
        let u_mean = &k * &x_mean + off;
        let mut u_coeff = &k * &x_coeff;
        u_coeff
            .view_mut((0, eps_off), (nu, nu))
            .copy_from(&chol(&case.params.noise[t]));
        eps_off += nu;
        mean.rows_mut(t * nt, nx).copy_from(&x_mean);
        mean.rows_mut(t * nt + nx, nu).copy_from(&u_mean);
        coeff.view_mut((t * nt, 0), (nx, n_eps)).copy_from(&x_coeff);
        coeff.view_mut((t * nt + nx, 0), (nu, n_eps)).copy_from(&u_coeff);
        let next_mean = &case.a * &x_mean + &case.b * &u_mean + &case.c;
        let mut next_coeff = &case.a * &x_coeff + &case.b * &u_coeff;
        next_coeff
            .view_mut((0, eps_off), (nx, nx))
            .copy_from(&chol(&case.noise));
        eps_off += nx;
        x_mean = next_mean;
        x_coeff = next_coeff;
    }
    mean.rows_mut(t_end * nt, nx).copy_from(&x_mean);
    coeff.view_mut((t_end * nt, 0), (nx, n_eps)).copy_from(&x_coeff);
    let prior_cov = &coeff * coeff.transpose();

    // stacked linear observation of every block
    let spec = &p.observation;
    let mut obs_noise = DMatrix::zeros(n, n);
    let mut target = DVector::zeros(n);
    for t in 0..t_end {
        let g = spec.running_weight() * case.alpha;
        obs_noise
            .view_mut((t * nt, t * nt), (nt, nt))
            .copy_from(&g.try_inverse().unwrap());
        target
            .rows_mut(t * nt, nt)
            .copy_from(spec.running_target());
    }
    let g = spec.terminal_weight() * case.alpha;
    obs_noise
        .view_mut((t_end * nt, t_end * nt), (nx, nx))
        .copy_from(&g.try_inverse().unwrap());
    target
        .rows_mut(t_end * nt, nx)
        .copy_from(spec.terminal_target());

    let s = &prior_cov + obs_noise;
    let s_inv = s.cholesky().unwrap().inverse();
    let gain = &prior_cov * s_inv;
    let post_mean = &mean + &gain * (target - &mean);
    let post_cov = &prior_cov - &gain * &prior_cov;
    (post_mean, (&post_cov + post_cov.transpose()) * 0.5)
}

/// Finite-horizon tracking LQR for `x' = A x + B u` and cost
/// `sum (x - x*)^T Q (x - x*) + (u - u*)^T R (u - u*) + (x_T - x*_T)^T Q_T (x_T - x*_T)`.
/// Returns `(K_t, k_t)` with `u_t = K_t x_t + k_t`.
pub fn riccati_tracking(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    cost: &QuadraticStageCost,
    horizon: usize,
) -> Vec<(DMatrix<f64>, DVector<f64>)> {
    let mut p = cost.q_terminal.clone();
    let mut s = -(&cost.q_terminal * &cost.x_target_terminal);
    let mut out = vec![(DMatrix::zeros(0, 0), DVector::zeros(0)); horizon];
    for t in (0..horizon).rev() {
        let quu = &cost.r + b.transpose() * &p * b;
        let qux = b.transpose() * &p * a;
        let qu = -(&cost.r * &cost.u_target) + b.transpose() * &s;
        let qx = -(&cost.q * &cost.x_target) + a.transpose() * &s;
        let inv = quu.clone().try_inverse().unwrap();
        let k_gain = -(&inv * &qux);
        let k_off = -(&inv * &qu);
        p = &cost.q + a.transpose() * &p * a - qux.transpose() * &inv * &qux;
        p = (&p + p.transpose()) * 0.5;
        s = qx - qux.transpose() * &inv * qu;
        out[t] = (k_gain, k_off);
    }
    out
}

/// Affine-basis moments from `(mu_x, Sigma_x, mu_u, Sigma_u, Sigma_xu)`.
pub fn affine_moments(
    mx: &DVector<f64>,
    sx: &DMatrix<f64>,
    mu: &DVector<f64>,
    su: &DMatrix<f64>,
    sxu: &DMatrix<f64>,
) -> BasisMoments {
    let nx = mx.len();
    let nu = mu.len();
    let mut bb = DMatrix::zeros(nx + 1, nx + 1);
    bb.view_mut((0, 0), (nx, nx)).copy_from(&(sx + mx * mx.transpose()));
    bb.view_mut((nx, 0), (1, nx)).copy_from(&mx.transpose());
    bb.view_mut((0, nx), (nx, 1)).copy_from(mx);
    bb[(nx, nx)] = 1.0;
    let mut bu = DMatrix::zeros(nx + 1, nu);
    bu.view_mut((0, 0), (nx, nu)).copy_from(&(sxu + mx * mu.transpose()));
    bu.view_mut((nx, 0), (1, nu)).copy_from(&mu.transpose());
    BasisMoments {
        bb,
        bu,
        uu: su + mu * mu.transpose(),
    }
}

/// Near-deterministic 4-state, 2-control LTI tracking problem with `T = 50`.
pub fn lqr_problem(seed: u64) -> (ControlProblem, DMatrix<f64>, DMatrix<f64>, QuadraticStageCost) {
    let mut r = rng(seed);
    let a = DMatrix::identity(4, 4) + random_matrix(&mut r, 4, 4, 0.1);
    let b = random_matrix(&mut r, 4, 2, 0.5);
    let model = LinearModel::new(a.clone(), b.clone(), ProcessNoise::diagonal(&[1e-10; 4]).unwrap())
        .unwrap();
    let cost = QuadraticStageCost {
        q: random_pd(&mut r, 4, 0.5, 0.2),
        r: random_pd(&mut r, 2, 0.3, 0.1),
        x_target: random_vector(&mut r, 4, 1.0),
        u_target: random_vector(&mut r, 2, 0.2),
        q_terminal: random_pd(&mut r, 4, 1.0, 1.0),
        x_target_terminal: random_vector(&mut r, 4, 1.0),
    };
    let spec = ObservationSpec::new(cost.clone(), vec![], None).unwrap();
    let problem = ControlProblem::new(
        Arc::new(model),
        spec,
        50,
        random_vector(&mut r, 4, 1.0),
        DMatrix::identity(4, 4),
    )
    .unwrap();
    (problem, a, b, cost)
}


/// Largest absolute mean and covariance errors of `m` against the exact
/// posterior of `case`.
pub fn posterior_errors(case: &LinearCase, m: &TrajectoryMoments) -> (f64, f64) {
    let (mean, cov) = dense_posterior(case);
    let nt = case.problem.tau_dim();
    let nx = case.problem.state_dim();
    let mut em: f64 = 0.0;
    let mut ec: f64 = 0.0;
    for t in 0..case.problem.horizon {
        em = em.max((&m.tau_mean[t] - mean.rows(t * nt, nt)).amax());
        ec = ec.max((&m.tau_cov[t] - cov.view((t * nt, t * nt), (nt, nt))).amax());
    }
    let o = case.problem.horizon * nt;
    em = em.max((&m.terminal_mean - mean.rows(o, nx)).amax());
    ec = ec.max((&m.terminal_cov - cov.view((o, o), (nx, nx))).amax());
    (em, ec)
}

