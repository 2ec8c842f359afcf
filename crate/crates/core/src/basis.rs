//! Feature maps `B(x)` for the parameterized controller `u = Theta^T B(x) + delta`.

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};

/// A state feature map with its Jacobian.
pub trait Basis: Debug + Send + Sync {
    fn name(&self) -> &str;
    /// Number of features for a state of dimension `nx`.
    fn dim(&self, nx: usize) -> usize;
    fn eval(&self, x: &[f64]) -> DVector<f64>;
    /// `d B / d x`, shape `dim x nx`.
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64>;
    /// True for `[x; 1]`, which admits closed-form moments.
    fn is_affine(&self) -> bool {
        false
    }
}

/// `B(x) = [x; 1]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct AffineBasis;

impl Basis for AffineBasis {
    fn name(&self) -> &str {
        "affine"
    }

    fn dim(&self, nx: usize) -> usize {
        nx + 1
    }

    fn eval(&self, x: &[f64]) -> DVector<f64> {
        let mut b = DVector::from_element(x.len() + 1, 1.0);
        b.rows_mut(0, x.len()).copy_from_slice(x);
        b
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = x.len();
        let mut j = DMatrix::zeros(n + 1, n);
        for i in 0..n {
            j[(i, i)] = 1.0;
        }
        j
    }

    fn is_affine(&self) -> bool {
        true
    }
}

/// Circle used by the obstacle-aware feature.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleFeature {
    pub x_index: usize,
    pub y_index: usize,
    pub center: [f64; 2],
    pub radius: f64,
}

impl CircleFeature {
    fn value(&self, x: &[f64]) -> f64 {
        let dx = x[self.x_index] - self.center[0];
        let dy = x[self.y_index] - self.center[1];
        dx * dx + dy * dy - self.radius * self.radius
    }
}

/// `B(x) = [x; 1; sum_i c_i(x)]` with
/// `c_i = (x - x_i)^2 + (y - y_i)^2 - r_i^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleAwareBasis {
    pub obstacles: Vec<CircleFeature>,
}

impl ObstacleAwareBasis {
    pub fn new(obstacles: Vec<CircleFeature>) -> Self {
        Self { obstacles }
    }

    pub fn with_radius_scale(&self, scale: f64) -> Self {
        Self {
            obstacles: self
                .obstacles
                .iter()
                .map(|o| CircleFeature {
                    radius: o.radius * scale,
                    ..o.clone()
                })
                .collect(),
        }
    }
}

impl Basis for ObstacleAwareBasis {
    fn name(&self) -> &str {
        "obstacle_aware"
    }

    fn dim(&self, nx: usize) -> usize {
        nx + 2
    }

    fn eval(&self, x: &[f64]) -> DVector<f64> {
        let n = x.len();
        let mut b = DVector::from_element(n + 2, 1.0);
        b.rows_mut(0, n).copy_from_slice(x);
        b[n + 1] = self.obstacles.iter().map(|o| o.value(x)).sum();
        b
    }

    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = x.len();
        let mut j = DMatrix::zeros(n + 2, n);
        for i in 0..n {
            j[(i, i)] = 1.0;
        }
        for o in &self.obstacles {
            j[(n + 1, o.x_index)] += 2.0 * (x[o.x_index] - o.center[0]);
            j[(n + 1, o.y_index)] += 2.0 * (x[o.y_index] - o.center[1]);
        }
        j
    }
}
