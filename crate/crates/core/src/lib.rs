//! Parameterized input inference for constrained and structured stochastic
//! optimal control.

pub mod basis;
pub mod dynamics;
pub mod em;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod ilqg;
pub mod objective;
pub mod policy;
pub mod problem;
pub mod smoother;
pub mod structure;

pub use error::{PiicError, Result};
