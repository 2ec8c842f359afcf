use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::basis::Basis;
use crate::error::{PiicError, Result};
use crate::structure::StructureMask;

/// Floor applied to controller noise covariances.
pub const SIGMA_DELTA_FLOOR: f64 = 1e-8;

/// Stochastic feedback law `u_t ~ N(Theta_t^T B(x_t), Sigma_delta_t)`.
#[derive(Debug, Clone)]
pub struct ControllerParams {
    pub basis: Arc<dyn Basis>,
    /// `Theta_t`, each `n_b x n_u`; identical entries when time-invariant.
    pub gains: Vec<DMatrix<f64>>,
    /// `Sigma_delta_t`, each `n_u x n_u`.
    pub noise: Vec<DMatrix<f64>>,
    pub time_invariant: bool,
    pub mask: Option<StructureMask>,
}

impl ControllerParams {
    /// Zero feedback rows and an offset row equal to `control_mean`. The
    /// offset row is the last row of `[x; 1]`-style bases; for other bases
    /// the row holding the constant feature must be given.
    pub fn initial(
        basis: Arc<dyn Basis>,
        state_dim: usize,
        control_mean: &DVector<f64>,
        noise: &DMatrix<f64>,
        horizon: usize,
        constant_row: usize,
    ) -> Result<Self> {
        let nb = basis.dim(state_dim);
        let nu = control_mean.len();
        if constant_row >= nb {
            return Err(PiicError::Index(format!(
                "constant row {constant_row} outside basis of size {nb}"
            )));
        }
        if noise.shape() != (nu, nu) {
            return Err(PiicError::Dimension(
                "controller covariance must be n_u x n_u".into(),
            ));
        }
        let mut theta = DMatrix::zeros(nb, nu);
        theta.row_mut(constant_row).copy_from(&control_mean.transpose());
        Ok(Self {
            basis,
            gains: vec![theta; horizon],
            noise: vec![noise.clone(); horizon],
            time_invariant: false,
            mask: None,
        })
    }

    pub fn with_mask(mut self, mask: StructureMask) -> Result<Self> {
        let (nb, nu) = self.gains[0].shape();
        if mask.basis_dim() != nb || mask.control_dim() != nu {
            return Err(PiicError::Dimension(format!(
                "mask is {}x{} but gains are {nb}x{nu}",
                mask.basis_dim(),
                mask.control_dim()
            )));
        }
        for g in &mut self.gains {
            for i in 0..nb {
                for j in 0..nu {
                    if !mask.allows(i, j) {
                        g[(i, j)] = 0.0;
                    }
                }
            }
        }
        // structured mode keeps per-coordinate noise
        for s in &mut self.noise {
            *s = DMatrix::from_diagonal(&s.diagonal());
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn time_invariant(mut self, flag: bool) -> Self {
        self.time_invariant = flag;
        self
    }

    pub fn with_basis(&self, basis: Arc<dyn Basis>) -> Self {
        Self {
            basis,
            ..self.clone()
        }
    }

    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    pub fn basis_dim(&self) -> usize {
        self.gains[0].nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.gains[0].ncols()
    }

    /// `Theta_t^T B(x)`.
    pub fn mean_control(&self, t: usize, x: &[f64]) -> DVector<f64> {
        self.gains[t].tr_mul(&self.basis.eval(x))
    }

    /// `d(Theta_t^T B(x)) / dx`.
    pub fn mean_control_jacobian(&self, t: usize, x: &[f64]) -> DMatrix<f64> {
        self.gains[t].tr_mul(&self.basis.jacobian(x))
    }

    pub fn is_structured(&self) -> bool {
        self.mask.as_ref().map(|m| !m.is_full()).unwrap_or(false)
    }
}
