//! Shared error type for the solver and analysis layers.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("query ({x:?}, t={t}) outside the field hull")]
    OutOfDomain { x: Vec<f64>, t: f64 },

    #[error("grid too small for stencil: {0}")]
    GridTooSmall(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("LCP iteration did not reach tolerance at step {time_index}: residual {residual:.3e} after {sweeps} sweeps")]
    NoConvergence {
        time_index: usize,
        residual: f64,
        sweeps: usize,
    },

    #[error("invalid quadratic polynomial: {0}")]
    InvalidPolynomial(String),

    #[error("degenerate least-squares fit: {0}")]
    DegenerateFit(String),

    #[error("({x:?}, t={t}) is not on the discrete free boundary")]
    NotOnFreeBoundary { x: Vec<f64>, t: f64 },

    #[error("base point is not classified singular")]
    NotSingular,

    #[error("insufficient samples: need {need}, have {have}")]
    InsufficientSamples { need: usize, have: usize },

    #[error("insufficient delta range: {0}")]
    InsufficientRange(String),

    #[error("frequency undefined: H(r, w) = 0")]
    DivisionByZero,

    #[error("lambda extrapolation rejected: tail fit residual {residual:.3e} exceeds {threshold:.3e}")]
    NoisyTail { residual: f64, threshold: f64 },

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
