use nalgebra::{DMatrix, DVector};

use super::{Dynamics, ProcessNoise};
use crate::error::{PiicError, Result};

/// Euler-discretized unicycle. State `(x, y, heading)`, control
/// `(linear velocity, angular velocity)`. The heading is not wrapped.
#[derive(Debug, Clone)]
pub struct UnicycleModel {
    pub dt: f64,
    noise: ProcessNoise,
}

impl UnicycleModel {
    pub fn new(dt: f64, noise: ProcessNoise) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(PiicError::Validation("dt must be positive".into()));
        }
        if noise.cov.nrows() != 3 {
            return Err(PiicError::Dimension(
                "unicycle process noise must be 3x3".into(),
            ));
        }
        Ok(Self { dt, noise })
    }
}

fn unicycle_step(dt: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
    let (th, v, w) = (x[2], u[0], u[1]);
    let f = [v * th.cos(), v * th.sin(), w];
    for i in 0..3 {
        out[i] = x[i] + dt * f[i];
    }
}

fn unicycle_jac(dt: f64, x: &[f64], u: &[f64], a: &mut DMatrix<f64>, b: &mut DMatrix<f64>, r: usize, cx: usize, cu: usize) {
    let (th, v) = (x[2], u[0]);
    for i in 0..3 {
        a[(r + i, cx + i)] = 1.0;
    }
    a[(r, cx + 2)] = -dt * v * th.sin();
    a[(r + 1, cx + 2)] = dt * v * th.cos();
    b[(r, cu)] = dt * th.cos();
    b[(r + 1, cu)] = dt * th.sin();
    b[(r + 2, cu + 1)] = dt;
}

impl Dynamics for UnicycleModel {
    fn state_dim(&self) -> usize {
        3
    }

    fn control_dim(&self) -> usize {
        2
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn process_noise(&self) -> &ProcessNoise {
        &self.noise
    }

    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(3);
        unicycle_step(self.dt, x.as_slice(), u.as_slice(), out.as_mut_slice());
        out
    }

    fn analytic_jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let mut a = DMatrix::zeros(3, 3);
        let mut b = DMatrix::zeros(3, 2);
        unicycle_jac(self.dt, x.as_slice(), u.as_slice(), &mut a, &mut b, 0, 0, 0);
        Some((a, b))
    }
}

/// `N` independent unicycles stacked as `(X^1, ..., X^N)` and
/// `(u^1, ..., u^N)`.
#[derive(Debug, Clone)]
pub struct MultiUnicycleModel {
    pub agents: usize,
    pub dt: f64,
    noise: ProcessNoise,
}

impl MultiUnicycleModel {
    /// `agent_noise` is the per-agent 3x3 covariance; the joint noise is its
    /// block-diagonal repetition.
    pub fn new(agents: usize, dt: f64, agent_noise: &DMatrix<f64>) -> Result<Self> {
        if agents == 0 {
            return Err(PiicError::Validation("need at least one agent".into()));
        }
        if !(dt > 0.0) {
            return Err(PiicError::Validation("dt must be positive".into()));
        }
        if agent_noise.nrows() != 3 || agent_noise.ncols() != 3 {
            return Err(PiicError::Dimension(
                "per-agent process noise must be 3x3".into(),
            ));
        }
        let mut cov = DMatrix::zeros(3 * agents, 3 * agents);
        for i in 0..agents {
            cov.view_mut((3 * i, 3 * i), (3, 3)).copy_from(agent_noise);
        }
        Ok(Self {
            agents,
            dt,
            noise: ProcessNoise::new(cov)?,
        })
    }
}

impl Dynamics for MultiUnicycleModel {
    fn state_dim(&self) -> usize {
        3 * self.agents
    }

    fn control_dim(&self) -> usize {
        2 * self.agents
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn process_noise(&self) -> &ProcessNoise {
        &self.noise
    }

    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(3 * self.agents);
        for i in 0..self.agents {
            unicycle_step(
                self.dt,
                &x.as_slice()[3 * i..3 * i + 3],
                &u.as_slice()[2 * i..2 * i + 2],
                &mut out.as_mut_slice()[3 * i..3 * i + 3],
            );
        }
        out
    }

    fn analytic_jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.agents;
        let mut a = DMatrix::zeros(3 * n, 3 * n);
        let mut b = DMatrix::zeros(3 * n, 2 * n);
        for i in 0..n {
            unicycle_jac(
                self.dt,
                &x.as_slice()[3 * i..3 * i + 3],
                &u.as_slice()[2 * i..2 * i + 2],
                &mut a,
                &mut b,
                3 * i,
                3 * i,
                2 * i,
            );
        }
        Some((a, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::finite_difference_jacobians;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::FRAC_PI_2;

    fn model() -> UnicycleModel {
        UnicycleModel::new(0.05, ProcessNoise::zeros(3)).unwrap()
    }

    #[test]
    fn straight_line_steps() {
        let m = model();
        let x = m
            .step_mean(&DVector::from_row_slice(&[0.0, 0.0, 0.0, 1.0, 0.0]))
            .unwrap();
        assert_eq!(x.as_slice(), &[0.05, 0.0, 0.0]);
        let x = m
            .step_mean(&DVector::from_row_slice(&[0.0, 0.0, FRAC_PI_2, 1.0, 0.0]))
            .unwrap();
        assert_abs_diff_eq!(x[0], 0.0, epsilon = 1e-16);
        assert_abs_diff_eq!(x[1], 0.05, epsilon = 1e-16);
        assert_eq!(x[2], FRAC_PI_2);
    }

    #[test]
    fn euler_consistency() {
        let m = model();
        let tau = DVector::from_row_slice(&[0.3, -1.2, 2.0, 0.7, -0.4]);
        let x = m.step_mean(&tau).unwrap();
        let f = [0.7 * 2.0_f64.cos(), 0.7 * 2.0_f64.sin(), -0.4];
        for i in 0..3 {
            assert_eq!(x[i], tau[i] + 0.05 * f[i]);
        }
    }

    #[test]
    fn heading_jacobian_entry() {
        let m = model();
        let (a, _) = m
            .linearize(&DVector::from_row_slice(&[0.0, 0.0, 0.0, 1.0, 0.0]))
            .unwrap();
        assert_abs_diff_eq!(a[(1, 2)], 0.05, epsilon = 1e-15);
    }

    #[test]
    fn analytic_matches_finite_differences() {
        let m = model();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x = DVector::from_fn(3, |_, _| rng.random_range(-5.0..5.0));
            let u = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
            let (a, b) = m.analytic_jacobians(&x, &u).unwrap();
            let (fa, fb) = finite_difference_jacobians(&m, &x, &u);
            assert!((a - fa).abs().max() < 1e-6);
            assert!((b - fb).abs().max() < 1e-6);
        }
    }

    #[test]
    fn agents_are_decoupled() {
        let m = MultiUnicycleModel::new(4, 0.05, &DMatrix::from_diagonal(&DVector::from_row_slice(&[1e-3, 1e-3, 1e-4]))).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let tau = DVector::from_fn(20, |_, _| rng.random_range(-2.0..2.0));
        let x = tau.rows(0, 12).into_owned();
        let u = tau.rows(12, 8).into_owned();
        let (fa, fb) = finite_difference_jacobians(&m, &x, &u);
        let (a, b) = m.linearize(&tau).unwrap();
        assert!((&a - &fa).abs().max() < 1e-6);
        assert!((&b - &fb).abs().max() < 1e-6);
        for i in 0..4 {
            for j in 0..4 {
                if i == j {
                    continue;
                }
                assert_eq!(fa.view((3 * i, 3 * j), (3, 3)).abs().max(), 0.0);
                assert_eq!(fb.view((3 * i, 2 * j), (3, 2)).abs().max(), 0.0);
            }
        }
        // each agent matches the single-agent model
        let single = model();
        let xn = m.transition(&x, &u);
        for i in 0..4 {
            let xi = single.transition(&x.rows(3 * i, 3).into_owned(), &u.rows(2 * i, 2).into_owned());
            assert_eq!(xn.rows(3 * i, 3).into_owned(), xi);
        }
    }
}
