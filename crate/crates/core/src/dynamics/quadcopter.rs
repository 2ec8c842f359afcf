use nalgebra::{DVector, Matrix3, Vector3};

use super::{Dynamics, ProcessNoise};
use crate::error::{PiicError, Result};

/// Smallest admissible `|cos(pitch)|` in the Euler-rate inverse.
pub const MIN_COS_PITCH: f64 = 1e-6;

/// Physical parameters of the wind-affected quadcopter.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadcopterParams {
    pub dt: f64,
    pub mass: f64,
    /// Gravity in the world frame, e.g. `(0, 0, -9.81)`.
    pub gravity: Vector3<f64>,
    pub air_density: f64,
    /// Diagonal of the drag coefficient matrix.
    pub drag: Vector3<f64>,
    /// Wind dynamics `d' = A d`.
    pub wind_a: Matrix3<f64>,
    /// Wind coupling into the position rate.
    pub wind_c: Matrix3<f64>,
}

impl Default for QuadcopterParams {
    fn default() -> Self {
        Self {
            dt: 0.02,
            mass: 1.0,
            gravity: Vector3::new(0.0, 0.0, -9.81),
            air_density: 1.225,
            drag: Vector3::new(0.1, 0.1, 0.1),
            wind_a: Matrix3::zeros(),
            wind_c: Matrix3::zeros(),
        }
    }
}

/// Quadcopter with roll-pitch-yaw attitude, body-frame relative air velocity
/// and a wind disturbance state.
///
/// State layout: position (0..3), relative air velocity in body frame
/// (3..6), roll/pitch/yaw (6..9), wind disturbance (9..12).
/// Control: body angular rates (0..3) and collective thrust (3).
#[derive(Debug, Clone)]
pub struct QuadcopterWindModel {
    pub params: QuadcopterParams,
    noise: ProcessNoise,
}

impl QuadcopterWindModel {
    pub fn new(params: QuadcopterParams, noise: ProcessNoise) -> Result<Self> {
        if !(params.dt > 0.0) || !(params.mass > 0.0) {
            return Err(PiicError::Validation(
                "quadcopter dt and mass must be positive".into(),
            ));
        }
        if noise.cov.nrows() != 12 {
            return Err(PiicError::Dimension(
                "quadcopter process noise must be 12x12".into(),
            ));
        }
        Ok(Self { params, noise })
    }

    /// Body-to-world rotation `R_psi R_theta R_phi`.
    pub fn rotation(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
        let (sf, cf) = roll.sin_cos();
        let (st, ct) = pitch.sin_cos();
        let (sp, cp) = yaw.sin_cos();
        let rz = Matrix3::new(cp, -sp, 0.0, sp, cp, 0.0, 0.0, 0.0, 1.0);
        let ry = Matrix3::new(ct, 0.0, st, 0.0, 1.0, 0.0, -st, 0.0, ct);
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cf, -sf, 0.0, sf, cf);
        rz * ry * rx
    }

    /// Continuous-time state derivative.
    pub fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        let v = Vector3::new(x[3], x[4], x[5]);
        let (roll, pitch, yaw) = (x[6], x[7], x[8]);
        let d = Vector3::new(x[9], x[10], x[11]);
        let w = Vector3::new(u[0], u[1], u[2]);
        let thrust = Vector3::new(0.0, 0.0, u[3]);

        let r = Self::rotation(roll, pitch, yaw);
        let pos_rate = r * v + p.wind_c * d;

        // drag opposes the relative air velocity, quadratic per axis
        let drag = -0.5
            * p.air_density
            * Vector3::new(
                p.drag[0] * v[0].abs() * v[0],
                p.drag[1] * v[1].abs() * v[1],
                p.drag[2] * v[2].abs() * v[2],
            );
        let vel_rate = v.cross(&w) + r.transpose() * p.gravity + (thrust + drag) / p.mass;

        let (sf, cf) = roll.sin_cos();
        let mut ct = pitch.cos();
        if ct.abs() < MIN_COS_PITCH {
            ct = MIN_COS_PITCH.copysign(if ct == 0.0 { 1.0 } else { ct });
        }
        let tt = pitch.sin() / ct;
        let roll_rate = w[0] + sf * tt * w[1] + cf * tt * w[2];
        let pitch_rate = cf * w[1] - sf * w[2];
        let yaw_rate = (sf * w[1] + cf * w[2]) / ct;

        let wind_rate = p.wind_a * d;

        DVector::from_row_slice(&[
            pos_rate[0],
            pos_rate[1],
            pos_rate[2],
            vel_rate[0],
            vel_rate[1],
            vel_rate[2],
            roll_rate,
            pitch_rate,
            yaw_rate,
            wind_rate[0],
            wind_rate[1],
            wind_rate[2],
        ])
    }
}

impl Dynamics for QuadcopterWindModel {
    fn state_dim(&self) -> usize {
        12
    }

    fn control_dim(&self) -> usize {
        4
    }

    fn dt(&self) -> f64 {
        self.params.dt
    }

    fn process_noise(&self) -> &ProcessNoise {
        &self.noise
    }

    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        x + self.derivative(x, u) * self.params.dt
    }
}
