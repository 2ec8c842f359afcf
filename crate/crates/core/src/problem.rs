use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::Dynamics;
use crate::error::{PiicError, Result};
use crate::gaussian::is_psd;
use crate::objective::ObservationSpec;

/// Everything that defines one finite-horizon control problem.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub dynamics: Arc<dyn Dynamics>,
    pub observation: ObservationSpec,
    pub horizon: usize,
    pub x0_mean: DVector<f64>,
    pub x0_cov: DMatrix<f64>,
}

impl ControlProblem {
    pub fn new(
        dynamics: Arc<dyn Dynamics>,
        observation: ObservationSpec,
        horizon: usize,
        x0_mean: DVector<f64>,
        x0_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let nx = dynamics.state_dim();
        let nu = dynamics.control_dim();
        if horizon == 0 {
            return Err(PiicError::Validation("horizon must be at least 1".into()));
        }
        if observation.state_dim() != nx || observation.control_dim() != nu {
            return Err(PiicError::Dimension(format!(
                "cost is defined on ({}, {}) but the model has ({nx}, {nu})",
                observation.state_dim(),
                observation.control_dim()
            )));
        }
        if x0_mean.len() != nx || x0_cov.shape() != (nx, nx) {
            return Err(PiicError::Dimension(
                "initial state mean/covariance do not match the state dimension".into(),
            ));
        }
        if !is_psd(&x0_cov, 1e-10) {
            return Err(PiicError::Validation(
                "initial state covariance is not PSD".into(),
            ));
        }
        Ok(Self {
            dynamics,
            observation,
            horizon,
            x0_mean,
            x0_cov,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.dynamics.control_dim()
    }

    pub fn tau_dim(&self) -> usize {
        self.state_dim() + self.control_dim()
    }

    pub fn with_observation(&self, observation: ObservationSpec) -> Self {
        Self {
            observation,
            ..self.clone()
        }
    }
}
