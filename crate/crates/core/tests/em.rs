mod common;

use std::sync::Arc;
use std::time::Instant;

use approx::assert_abs_diff_eq;
use common::{affine_moments, lqr_problem, random_matrix, random_pd, random_vector, riccati_tracking, rng};
use nalgebra::{DMatrix, DVector};
use piic::basis::AffineBasis;
use piic::em::{
    alpha_numerator, run_piic, update_alpha, update_sigma_delta, update_theta_structured,
    update_theta_ti, update_theta_tv, EmOptions,
};
use piic::objective::{ObservationSpec, QuadraticStageCost};
use piic::policy::ControllerParams;
use piic::smoother::TrajectoryMoments;
use piic::structure::StructureMask;

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

#[test]
fn scalar_gain_and_offset() {
    let m = affine_moments(
        &DVector::from_element(1, 3.0),
        &scalar(2.0),
        &DVector::from_element(1, 4.0),
        &scalar(2.0),
        &scalar(1.0),
    );
    let theta = &update_theta_tv(std::slice::from_ref(&m), 0.0).unwrap()[0];
    assert_abs_diff_eq!(theta[(0, 0)], 0.5, epsilon = 1e-12);
    assert_abs_diff_eq!(theta[(1, 0)], 2.5, epsilon = 1e-12);
    let sig = update_sigma_delta(&[m], std::slice::from_ref(theta), false, false).unwrap();
    assert_abs_diff_eq!(sig[0][(0, 0)], 1.5, epsilon = 1e-12);
}

#[test]
fn independent_control_gives_offset_only() {
    let m = affine_moments(
        &DVector::from_row_slice(&[1.0, -1.0]),
        &DMatrix::identity(2, 2),
        &DVector::from_element(1, 0.7),
        &scalar(0.3),
        &DMatrix::zeros(2, 1),
    );
    let theta = &update_theta_tv(&[m], 0.0).unwrap()[0];
    assert_abs_diff_eq!(theta[(0, 0)], 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(theta[(1, 0)], 0.0, epsilon = 1e-12);
    assert_abs_diff_eq!(theta[(2, 0)], 0.7, epsilon = 1e-12);
}

#[test]
fn perfectly_linear_control_hits_the_floor() {
    let k = DMatrix::from_row_slice(1, 2, &[0.4, -1.2]);
    let sx = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
    let mx = DVector::from_row_slice(&[0.3, 0.1]);
    let m = affine_moments(&mx, &sx, &(&k * &mx), &(&k * &sx * k.transpose()), &(&sx * k.transpose()));
    let theta = update_theta_tv(std::slice::from_ref(&m), 0.0).unwrap();
    let sig = update_sigma_delta(&[m], &theta, false, false).unwrap();
    assert_abs_diff_eq!(sig[0][(0, 0)], 1e-8, epsilon = 1e-12);
}

#[test]
fn time_invariant_special_cases() {
    let mut r = rng(1);
    let m = affine_moments(
        &random_vector(&mut r, 2, 1.0),
        &random_pd(&mut r, 2, 1.0, 0.1),
        &random_vector(&mut r, 1, 1.0),
        &scalar(2.0),
        &random_matrix(&mut r, 2, 1, 0.3),
    );
    let tv = update_theta_tv(std::slice::from_ref(&m), 0.0).unwrap();
    let ti = update_theta_ti(std::slice::from_ref(&m), 0.0).unwrap();
    assert!((&tv[0] - &ti).amax() < 1e-12);
    let ti3 = update_theta_ti(&[m.clone(), m.clone(), m], 0.0).unwrap();
    assert!((&tv[0] - ti3).amax() < 1e-12);
}

#[test]
fn alpha_update_examples() {
    let n = 2;
    let spec = ObservationSpec::new(
        QuadraticStageCost {
            q: DMatrix::identity(n, n),
            r: DMatrix::zeros(0, 0),
            x_target: DVector::zeros(n),
            u_target: DVector::zeros(0),
            q_terminal: DMatrix::identity(n, n),
            x_target_terminal: DVector::zeros(n),
        },
        vec![],
        None,
    )
    .unwrap();
    let moments = |m: DMatrix<f64>| TrajectoryMoments {
        tau_mean: vec![DVector::zeros(n); 2],
        tau_cov: vec![DMatrix::zeros(n, n); 2],
        terminal_mean: DVector::zeros(n),
        terminal_cov: DMatrix::zeros(n, n),
        residual_moments: vec![m; 3],
        state_dim: n,
        warning: false,
    };
    let a = update_alpha(&moments(DMatrix::identity(n, n)), &spec).unwrap().unwrap();
    assert_abs_diff_eq!(a, 2.0 / 3.0, epsilon = 1e-14);
    assert_eq!(alpha_numerator(&spec, 2), 4.0);
    let a5 = update_alpha(&moments(DMatrix::identity(n, n) * 5.0), &spec).unwrap().unwrap();
    assert_abs_diff_eq!(a5, a / 5.0, epsilon = 1e-14);
    assert!(update_alpha(&moments(DMatrix::zeros(n, n)), &spec).unwrap().is_none());
}

#[test]
fn full_mask_equals_unstructured() {
    let mut r = rng(4);
    let m = affine_moments(
        &random_vector(&mut r, 3, 1.0),
        &random_pd(&mut r, 3, 1.0, 0.1),
        &random_vector(&mut r, 2, 1.0),
        &random_pd(&mut r, 2, 1.0, 2.0),
        &random_matrix(&mut r, 3, 2, 0.2),
    );
    let s = update_theta_structured(std::slice::from_ref(&m), &StructureMask::full(4, 2), 0.0, false).unwrap();
    let u = update_theta_tv(&[m], 0.0).unwrap();
    assert!((&s[0] - &u[0]).amax() < 1e-12);
}

/// Two decoupled scalar subsystems with a diagonal mask: each column equals
/// the single-subsystem regression on `[x_i; 1]`.
#[test]
fn diagonal_mask_on_decoupled_subsystems() {
    let mx = DVector::from_row_slice(&[0.5, -1.0]);
    let sx = DMatrix::from_diagonal(&DVector::from_row_slice(&[2.0, 0.5]));
    let mu = DVector::from_row_slice(&[1.0, 2.0]);
    let su = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 3.0]));
    let sxu = DMatrix::from_diagonal(&DVector::from_row_slice(&[0.8, -0.6]));
    let m = affine_moments(&mx, &sx, &mu, &su, &sxu);
    // rows: x1 | x2 | 1
    let mask = StructureMask::from_blocks(&[1, 1, 1], &[1, 1], &[(0, 0), (1, 1), (2, 0), (2, 1)])
        .unwrap();
    let theta = &update_theta_structured(&[m], &mask, 0.0, false).unwrap()[0];
    for i in 0..2 {
        let single = affine_moments(
            &DVector::from_element(1, mx[i]),
            &scalar(sx[(i, i)]),
            &DVector::from_element(1, mu[i]),
            &scalar(su[(i, i)]),
            &scalar(sxu[(i, i)]),
        );
        let oracle = &update_theta_tv(&[single], 0.0).unwrap()[0];
        assert_abs_diff_eq!(theta[(i, i)], oracle[(0, 0)], epsilon = 1e-12);
        assert_abs_diff_eq!(theta[(2, i)], oracle[(1, 0)], epsilon = 1e-12);
        assert_eq!(theta[(1 - i, i)].to_bits(), 0);
    }
}

#[test]
fn lqr_gains_recovered() {
    let (problem, a, b, cost) = lqr_problem(42);
    let init = ControllerParams::initial(
        Arc::new(AffineBasis),
        4,
        &DVector::zeros(2),
        &(DMatrix::identity(2, 2) * 1e4),
        50,
        4,
    )
    .unwrap();
    let start = Instant::now();
    let res = run_piic(&problem, init, &EmOptions::default()).unwrap();
    let elapsed = start.elapsed();
    let oracle = riccati_tracking(&a, &b, &cost, 50);
    let mut ek: f64 = 0.0;
    let mut eo: f64 = 0.0;
    for t in 0..50 {
        let th = &res.params.gains[t];
        let k = th.rows(0, 4).transpose();
        let off = th.row(4).transpose();
        ek = ek.max((&k - &oracle[t].0).amax());
        eo = eo.max((&off - &oracle[t].1).amax());
    }
    println!(
        "iterations {}, converged {}, gain err {ek:e}, offset err {eo:e}, {:?}",
        res.log.len(),
        res.converged,
        elapsed
    );
    assert!(ek <= 1e-3 && eo <= 1e-3);
}
