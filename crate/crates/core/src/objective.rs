//! Quadratic stage costs, relaxed tanh barriers and the Gaussian observation
//! model that turns cost into likelihood.
//!
//! The running observation stacks `[x; u; psi_1; ...; psi_n; formation]`
//! with target `[x_d; u_d; 0; ...; 0; delta*]` and weight
//! `blockdiag(Q, R, q_1, ..., q_n, Q_f)`. The terminal observation drops the
//! control slot and every constraint that reads the control.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PiicError, Result};
use crate::gaussian::is_psd;

/// What an inequality constraint `K(tau) > 0` measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ConstraintKind {
    /// Circular keep-out zone on the state coordinates `(x_index, y_index)`:
    /// `K = (x - cx)^2 + (y - cy)^2 - (radius + safety_radius)^2`.
    Obstacle {
        x_index: usize,
        y_index: usize,
        center: [f64; 2],
        radius: f64,
        safety_radius: f64,
    },
    /// `K = u[index] - bound`.
    ControlLower { index: usize, bound: f64 },
    /// `K = bound - u[index]`.
    ControlUpper { index: usize, bound: f64 },
}

/// One relaxed barrier term `psi^T q psi` with
/// `psi = gamma * (1 - tanh(epsilon * K))` on the unsafe side and zero on
/// the safe side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierConstraint {
    pub kind: ConstraintKind,
    pub weight: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl BarrierConstraint {
    pub fn new(kind: ConstraintKind, weight: f64, gamma: f64, epsilon: f64) -> Result<Self> {
        let c = Self {
            kind,
            weight,
            gamma,
            epsilon,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !(self.epsilon > 0.0) {
            return Err(PiicError::Validation(format!(
                "barrier needs gamma > 0 and epsilon > 0 (got {}, {})",
                self.gamma, self.epsilon
            )));
        }
        if !(self.weight >= 0.0) {
            return Err(PiicError::Validation(format!(
                "barrier weight must be >= 0 (got {})",
                self.weight
            )));
        }
        if let ConstraintKind::Obstacle {
            radius,
            safety_radius,
            ..
        } = self.kind
        {
            if !(radius >= 0.0) || !(safety_radius >= 0.0) {
                return Err(PiicError::Validation(
                    "obstacle radii must be non-negative".into(),
                ));
            }
        }
        Ok(())
    }

    /// True when `K` depends on the state only, so the constraint also
    /// applies at the terminal time.
    pub fn is_state_only(&self) -> bool {
        matches!(self.kind, ConstraintKind::Obstacle { .. })
    }

    /// Constraint value `K(x, u)`. `u` may be empty for state-only
    /// constraints.
    pub fn value(&self, x: &[f64], u: &[f64]) -> f64 {
        match self.kind {
            ConstraintKind::Obstacle {
                x_index,
                y_index,
                center,
                radius,
                safety_radius,
            } => {
                let dx = x[x_index] - center[0];
                let dy = x[y_index] - center[1];
                let r = radius + safety_radius;
                dx * dx + dy * dy - r * r
            }
            ConstraintKind::ControlLower { index, bound } => u[index] - bound,
            ConstraintKind::ControlUpper { index, bound } => bound - u[index],
        }
    }

    /// Gradient of `K` with respect to the stacked `(x, u)`; when `nu == 0`
    /// only the state block is returned.
    pub fn value_gradient(&self, x: &[f64], nu: usize) -> DVector<f64> {
        let nx = x.len();
        let mut g = DVector::zeros(nx + nu);
        match self.kind {
            ConstraintKind::Obstacle {
                x_index,
                y_index,
                center,
                ..
            } => {
                g[x_index] = 2.0 * (x[x_index] - center[0]);
                g[y_index] = 2.0 * (x[y_index] - center[1]);
            }
            ConstraintKind::ControlLower { index, .. } => g[nx + index] = 1.0,
            ConstraintKind::ControlUpper { index, .. } => g[nx + index] = -1.0,
        }
        g
    }

    /// `psi` as a function of the constraint value. The boundary `K = 0` is
    /// unsafe.
    pub fn psi_of(&self, k: f64) -> f64 {
        if k > 0.0 {
            0.0
        } else {
            self.gamma * (1.0 - (self.epsilon * k).tanh())
        }
    }

    /// `d psi / d K`, taken from the unsafe side at the boundary.
    pub fn psi_slope(&self, k: f64) -> f64 {
        if k > 0.0 {
            0.0
        } else {
            let t = (self.epsilon * k).tanh();
            -self.gamma * self.epsilon * (1.0 - t * t)
        }
    }

    pub fn psi(&self, x: &[f64], u: &[f64]) -> f64 {
        self.psi_of(self.value(x, u))
    }

    pub fn cost(&self, x: &[f64], u: &[f64]) -> f64 {
        let p = self.psi(x, u);
        p * self.weight * p
    }

    pub fn is_violated(&self, x: &[f64], u: &[f64]) -> bool {
        self.value(x, u) <= 0.0
    }
}

/// `psi_j(tau)` for a stacked `tau` with `nx` state entries.
pub fn barrier_psi(c: &BarrierConstraint, tau: &DVector<f64>, nx: usize) -> f64 {
    let (x, u) = tau.as_slice().split_at(nx);
    c.psi(x, u)
}

pub fn constraint_cost(c: &BarrierConstraint, tau: &DVector<f64>, nx: usize) -> f64 {
    let (x, u) = tau.as_slice().split_at(nx);
    c.cost(x, u)
}

/// Obstacle on the first two state coordinates.
pub fn obstacle_constraint(
    center: [f64; 2],
    radius: f64,
    safety_radius: f64,
    weight: f64,
    gamma: f64,
    epsilon: f64,
) -> Result<BarrierConstraint> {
    BarrierConstraint::new(
        ConstraintKind::Obstacle {
            x_index: 0,
            y_index: 1,
            center,
            radius,
            safety_radius,
        },
        weight,
        gamma,
        epsilon,
    )
}

/// Lower and upper one-sided barriers keeping `lo < u[index] < hi`.
pub fn box_constraint(
    index: usize,
    lo: f64,
    hi: f64,
    weight: f64,
    gamma: f64,
    epsilon: f64,
) -> Result<(BarrierConstraint, BarrierConstraint)> {
    if !(lo < hi) {
        return Err(PiicError::Validation(format!(
            "box constraint on control {index} needs lo < hi (got {lo}, {hi})"
        )));
    }
    Ok((
        BarrierConstraint::new(
            ConstraintKind::ControlLower { index, bound: lo },
            weight,
            gamma,
            epsilon,
        )?,
        BarrierConstraint::new(
            ConstraintKind::ControlUpper { index, bound: hi },
            weight,
            gamma,
            epsilon,
        )?,
    ))
}

/// Quadratic tracking weights and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticStageCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub x_target: DVector<f64>,
    pub u_target: DVector<f64>,
    pub q_terminal: DMatrix<f64>,
    pub x_target_terminal: DVector<f64>,
}

impl QuadraticStageCost {
    pub fn validate(&self) -> Result<()> {
        let nx = self.x_target.len();
        let nu = self.u_target.len();
        let shape_ok = self.q.shape() == (nx, nx)
            && self.r.shape() == (nu, nu)
            && self.q_terminal.shape() == (nx, nx)
            && self.x_target_terminal.len() == nx;
        if !shape_ok {
            return Err(PiicError::Dimension(
                "cost matrices do not match target dimensions".into(),
            ));
        }
        for (name, m) in [("Q", &self.q), ("R", &self.r), ("Q_T", &self.q_terminal)] {
            if !is_psd(m, 1e-10) {
                return Err(PiicError::Validation(format!("{name} must be symmetric PSD")));
            }
        }
        Ok(())
    }
}

/// Kronecker product `B ⊗ I_n`.
fn kron_identity(b: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(b.nrows() * n, b.ncols() * n);
    for i in 0..b.nrows() {
        for j in 0..b.ncols() {
            for k in 0..n {
                out[(i * n + k, j * n + k)] = b[(i, j)];
            }
        }
    }
    out
}

/// Quadratic penalty on inter-agent relative states along graph edges.
#[derive(Debug, Clone, PartialEq)]
pub struct FormationCost {
    pub incidence: DMatrix<f64>,
    pub delta_star: DVector<f64>,
    pub weight: DMatrix<f64>,
    pub agent_dim: usize,
    /// `(B ⊗ I)^T`, mapping the joint state to stacked edge differences.
    relative: DMatrix<f64>,
}

impl FormationCost {
    pub fn new(
        incidence: DMatrix<f64>,
        delta_star: DVector<f64>,
        weight: DMatrix<f64>,
        agent_dim: usize,
    ) -> Result<Self> {
        let m = incidence.ncols();
        let dim = m * agent_dim;
        if delta_star.len() != dim || weight.shape() != (dim, dim) {
            return Err(PiicError::Dimension(format!(
                "formation with {m} edges of dimension {agent_dim} needs delta* of length {dim} and a {dim}x{dim} weight"
            )));
        }
        for e in 0..m {
            let s: f64 = incidence.column(e).sum();
            if s.abs() > 1e-12 {
                return Err(PiicError::Validation(format!(
                    "incidence column {e} does not sum to zero"
                )));
            }
        }
        if !is_psd(&weight, 1e-10) {
            return Err(PiicError::Validation("formation weight must be PSD".into()));
        }
        let relative = kron_identity(&incidence, agent_dim).transpose();
        Ok(Self {
            incidence,
            delta_star,
            weight,
            agent_dim,
            relative,
        })
    }

    /// Incidence matrix from 1-based `(head, tail)` edges: column `e` has
    /// `+1` at the head and `-1` at the tail, so the edge difference is
    /// `X_head - X_tail`.
    pub fn incidence_from_edges(agents: usize, edges: &[(usize, usize)]) -> Result<DMatrix<f64>> {
        let mut b = DMatrix::zeros(agents, edges.len());
        for (e, &(head, tail)) in edges.iter().enumerate() {
            if head == 0 || tail == 0 || head > agents || tail > agents || head == tail {
                return Err(PiicError::Validation(format!(
                    "edge ({head}, {tail}) is invalid for {agents} agents"
                )));
            }
            b[(head - 1, e)] = 1.0;
            b[(tail - 1, e)] = -1.0;
        }
        Ok(b)
    }

    pub fn dim(&self) -> usize {
        self.delta_star.len()
    }

    pub fn state_dim(&self) -> usize {
        self.relative.ncols()
    }

    /// `(B ⊗ I)^T X`.
    pub fn relative_states(&self, x: &[f64]) -> DVector<f64> {
        &self.relative * DVector::from_column_slice(x)
    }

    pub fn relative_map(&self) -> &DMatrix<f64> {
        &self.relative
    }

    pub fn cost(&self, x: &[f64]) -> f64 {
        let r = self.relative_states(x) - &self.delta_star;
        (r.transpose() * &self.weight * &r)[(0, 0)]
    }
}

/// Formation penalty `((B ⊗ I)^T X - delta*)^T Q_f (...)`.
pub fn formation_cost(
    incidence: &DMatrix<f64>,
    delta_star: &DVector<f64>,
    q_f: &DMatrix<f64>,
    x: &DVector<f64>,
) -> Result<f64> {
    let n = incidence.nrows();
    if n == 0 || !x.len().is_multiple_of(n) {
        return Err(PiicError::Dimension(format!(
            "joint state of length {} is not divisible by {n} agents",
            x.len()
        )));
    }
    let f = FormationCost::new(
        incidence.clone(),
        delta_star.clone(),
        q_f.clone(),
        x.len() / n,
    )?;
    Ok(f.cost(x.as_slice()))
}

fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(n, n);
    let mut o = 0;
    for b in blocks {
        out.view_mut((o, o), b.shape()).copy_from(b);
        o += b.nrows();
    }
    out
}

/// Cost-as-likelihood observation model for one problem.
#[derive(Debug, Clone)]
pub struct ObservationSpec {
    pub cost: QuadraticStageCost,
    pub constraints: Vec<BarrierConstraint>,
    pub formation: Option<FormationCost>,
    running_weight: DMatrix<f64>,
    running_target: DVector<f64>,
    terminal_weight: DMatrix<f64>,
    terminal_target: DVector<f64>,
    terminal_constraints: Vec<usize>,
}

impl ObservationSpec {
    pub fn new(
        cost: QuadraticStageCost,
        constraints: Vec<BarrierConstraint>,
        formation: Option<FormationCost>,
    ) -> Result<Self> {
        cost.validate()?;
        let nx = cost.x_target.len();
        let nu = cost.u_target.len();
        for c in &constraints {
            c.validate()?;
            let ok = match c.kind {
                ConstraintKind::Obstacle {
                    x_index, y_index, ..
                } => x_index < nx && y_index < nx,
                ConstraintKind::ControlLower { index, .. }
                | ConstraintKind::ControlUpper { index, .. } => index < nu,
            };
            if !ok {
                return Err(PiicError::Index(format!(
                    "constraint {:?} indexes outside the state/control",
                    c.kind
                )));
            }
        }
        if let Some(f) = &formation {
            if f.state_dim() != nx {
                return Err(PiicError::Dimension(format!(
                    "formation acts on {} states but the model has {nx}",
                    f.state_dim()
                )));
            }
        }
        let terminal_constraints: Vec<usize> = constraints
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_state_only())
            .map(|(i, _)| i)
            .collect();

        let scalar = |w: f64| DMatrix::from_element(1, 1, w);
        let mut running_blocks = vec![cost.q.clone(), cost.r.clone()];
        running_blocks.extend(constraints.iter().map(|c| scalar(c.weight)));
        let mut terminal_blocks = vec![cost.q_terminal.clone()];
        terminal_blocks.extend(terminal_constraints.iter().map(|&i| scalar(constraints[i].weight)));
        let mut running_target: Vec<f64> = cost
            .x_target
            .iter()
            .chain(cost.u_target.iter())
            .cloned()
            .collect();
        running_target.extend(std::iter::repeat_n(0.0, constraints.len()));
        let mut terminal_target: Vec<f64> = cost.x_target_terminal.iter().cloned().collect();
        terminal_target.extend(std::iter::repeat_n(0.0, terminal_constraints.len()));
        if let Some(f) = &formation {
            running_blocks.push(f.weight.clone());
            terminal_blocks.push(f.weight.clone());
            running_target.extend(f.delta_star.iter());
            terminal_target.extend(f.delta_star.iter());
        }

        Ok(Self {
            running_weight: block_diag(&running_blocks),
            running_target: DVector::from_vec(running_target),
            terminal_weight: block_diag(&terminal_blocks),
            terminal_target: DVector::from_vec(terminal_target),
            cost,
            constraints,
            formation,
            terminal_constraints,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.cost.x_target.len()
    }

    pub fn control_dim(&self) -> usize {
        self.cost.u_target.len()
    }

    /// `n*`: running observation dimension.
    pub fn running_dim(&self) -> usize {
        self.running_target.len()
    }

    pub fn terminal_dim(&self) -> usize {
        self.terminal_target.len()
    }

    /// `Gamma_t` for `t < T`.
    pub fn running_weight(&self) -> &DMatrix<f64> {
        &self.running_weight
    }

    /// `z*_t` for `t < T`.
    pub fn running_target(&self) -> &DVector<f64> {
        &self.running_target
    }

    pub fn terminal_weight(&self) -> &DMatrix<f64> {
        &self.terminal_weight
    }

    pub fn terminal_target(&self) -> &DVector<f64> {
        &self.terminal_target
    }

    /// Indices of constraints that also apply at the terminal time.
    pub fn terminal_constraints(&self) -> &[usize] {
        &self.terminal_constraints
    }

    /// `h(tau)` for `t < T`.
    pub fn h_running(&self, x: &[f64], u: &[f64]) -> DVector<f64> {
        let mut h = Vec::with_capacity(self.running_dim());
        h.extend_from_slice(x);
        h.extend_from_slice(u);
        h.extend(self.constraints.iter().map(|c| c.psi(x, u)));
        if let Some(f) = &self.formation {
            h.extend(f.relative_states(x).iter());
        }
        DVector::from_vec(h)
    }

    pub fn h_terminal(&self, x: &[f64]) -> DVector<f64> {
        let mut h = Vec::with_capacity(self.terminal_dim());
        h.extend_from_slice(x);
        h.extend(
            self.terminal_constraints
                .iter()
                .map(|&i| self.constraints[i].psi(x, &[])),
        );
        if let Some(f) = &self.formation {
            h.extend(f.relative_states(x).iter());
        }
        DVector::from_vec(h)
    }

    /// Jacobian of `h_running` with respect to the stacked `(x, u)`.
    pub fn h_running_jacobian(&self, x: &[f64], u: &[f64]) -> DMatrix<f64> {
        let nx = x.len();
        let nu = u.len();
        let mut j = DMatrix::zeros(self.running_dim(), nx + nu);
        for i in 0..nx + nu {
            j[(i, i)] = 1.0;
        }
        let mut row = nx + nu;
        for c in &self.constraints {
            let slope = c.psi_slope(c.value(x, u));
            if slope != 0.0 {
                let g = c.value_gradient(x, nu);
                j.row_mut(row).copy_from(&(g.transpose() * slope));
            }
            row += 1;
        }
        if let Some(f) = &self.formation {
            j.view_mut((row, 0), (f.dim(), nx)).copy_from(f.relative_map());
        }
        j
    }

    pub fn h_terminal_jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let nx = x.len();
        let mut j = DMatrix::zeros(self.terminal_dim(), nx);
        for i in 0..nx {
            j[(i, i)] = 1.0;
        }
        let mut row = nx;
        for &ci in &self.terminal_constraints {
            let c = &self.constraints[ci];
            let slope = c.psi_slope(c.value(x, &[]));
            if slope != 0.0 {
                let g = c.value_gradient(x, 0);
                j.row_mut(row).copy_from(&(g.transpose() * slope));
            }
            row += 1;
        }
        if let Some(f) = &self.formation {
            j.view_mut((row, 0), (f.dim(), nx)).copy_from(f.relative_map());
        }
        j
    }

    /// `(h(tau), z* - h(tau))` for a running step.
    pub fn observe(&self, tau: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (x, u) = tau.as_slice().split_at(self.state_dim());
        let h = self.h_running(x, u);
        let r = &self.running_target - &h;
        (h, r)
    }

    pub fn observe_terminal(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let h = self.h_terminal(x.as_slice());
        let r = &self.terminal_target - &h;
        (h, r)
    }

    /// Running cost evaluated term by term from its definition.
    pub fn stage_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        let dx = DVector::from_column_slice(x) - &self.cost.x_target;
        let du = DVector::from_column_slice(u) - &self.cost.u_target;
        let mut c = (dx.transpose() * &self.cost.q * &dx)[(0, 0)]
            + (du.transpose() * &self.cost.r * &du)[(0, 0)];
        c += self.constraints.iter().map(|k| k.cost(x, u)).sum::<f64>();
        if let Some(f) = &self.formation {
            c += f.cost(x);
        }
        c
    }

    pub fn terminal_cost(&self, x: &[f64]) -> f64 {
        let dx = DVector::from_column_slice(x) - &self.cost.x_target_terminal;
        let mut c = (dx.transpose() * &self.cost.q_terminal * &dx)[(0, 0)];
        c += self
            .terminal_constraints
            .iter()
            .map(|&i| self.constraints[i].cost(x, &[]))
            .sum::<f64>();
        if let Some(f) = &self.formation {
            c += f.cost(x);
        }
        c
    }

    /// Total trajectory cost of `T + 1` states and `T` controls.
    pub fn trajectory_cost(&self, xs: &[DVector<f64>], us: &[DVector<f64>]) -> f64 {
        let mut c: f64 = xs
            .iter()
            .zip(us)
            .map(|(x, u)| self.stage_cost(x.as_slice(), u.as_slice()))
            .sum();
        if let Some(last) = xs.get(us.len()) {
            c += self.terminal_cost(last.as_slice());
        }
        c
    }

    /// A copy with every barrier `gamma` replaced.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        let constraints = self
            .constraints
            .iter()
            .map(|c| BarrierConstraint {
                gamma,
                ..c.clone()
            })
            .collect();
        Self::new(self.cost.clone(), constraints, self.formation.clone())
    }

    /// A copy with every obstacle radius multiplied by `scale`.
    pub fn with_obstacle_scale(&self, scale: f64) -> Result<Self> {
        let constraints = self
            .constraints
            .iter()
            .map(|c| {
                let mut c = c.clone();
                if let ConstraintKind::Obstacle { radius, .. } = &mut c.kind {
                    *radius *= scale;
                }
                c
            })
            .collect();
        Self::new(self.cost.clone(), constraints, self.formation.clone())
    }
}
