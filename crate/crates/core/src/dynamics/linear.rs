use nalgebra::{DMatrix, DVector};

use super::{Dynamics, ProcessNoise};
use crate::error::{PiicError, Result};

/// `x_{t+1} = A x_t + B u_t + c + eta_t`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub offset: DVector<f64>,
    noise: ProcessNoise,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, noise: ProcessNoise) -> Result<Self> {
        let n = a.nrows();
        Self::with_offset(a, b, DVector::zeros(n), noise)
    }

    pub fn with_offset(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        offset: DVector<f64>,
        noise: ProcessNoise,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || offset.len() != n || noise.cov.nrows() != n {
            return Err(PiicError::Dimension(format!(
                "linear model: A {}x{}, B {}x{}, offset {}, noise {}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                offset.len(),
                noise.cov.nrows()
            )));
        }
        Ok(Self {
            a,
            b,
            offset,
            noise,
        })
    }
}

impl Dynamics for LinearModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    fn dt(&self) -> f64 {
        1.0
    }

    fn process_noise(&self) -> &ProcessNoise {
        &self.noise
    }

    fn transition(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.offset
    }

    fn analytic_jacobians(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
    ) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        Some((self.a.clone(), self.b.clone()))
    }
}
