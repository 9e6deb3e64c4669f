use thiserror::Error;

use crate::expr::ExprError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error("{what} is not finite at {point:?}")]
    DomainProbe { what: String, point: Vec<f64> },

    #[error("vector field of regime {regime} failed to evaluate at {point:?}")]
    FieldDomain { regime: usize, point: Vec<f64> },

    #[error("rate invariant violated at {point:?} for regime {regime}: {detail}")]
    InvariantViolation {
        regime: usize,
        point: Vec<f64>,
        detail: String,
    },

    #[error("flow Jacobian is numerically singular (|det| = {det:e})")]
    SingularJacobian { det: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("histogram grids do not match")]
    GridMismatch,

    #[error("bracket family reached {size} fields at order {order} (cap {cap})")]
    FamilyExplosion { size: usize, cap: usize, order: usize },

    #[error("micro-step too coarse: tau * speed bound = {displacement:e} exceeds two cells ({cell:e} each)")]
    ResolutionTooCoarse { displacement: f64, cell: f64 },

    #[error("{failed} of {total} replicas failed; first failure in replica {first_index}: {first_message}")]
    Ensemble {
        failed: usize,
        total: usize,
        first_index: usize,
        first_message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
