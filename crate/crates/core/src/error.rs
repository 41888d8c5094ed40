use thiserror::Error;

/// Errors raised by the model, the solvers and the experiment drivers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DsmError {
    #[error("the user set is empty")]
    EmptyUserSet,

    /// Slot indices are reported 1-based.
    #[error("aggregate load is not strictly positive at slot {slot} (L = {value})")]
    NonPositiveAggregateLoad { slot: usize, value: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("user {user} has an empty feasible region: {reason}")]
    InfeasibleUserModel { user: usize, reason: String },

    #[error("{solver} did not converge in {iterations} iterations (residual {residual:e})")]
    MaxIterationsExceeded {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("degenerate fixed-point direction at slot {slot}: |a + A delta| = {norm:e}")]
    DegenerateDirection { slot: usize, norm: f64 },

    #[error("outer loop stopped after {iterations} iterations (relative change {relative_change:e})")]
    MaxOuterIterations {
        iterations: usize,
        relative_change: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for DsmError {
    fn from(e: std::io::Error) -> Self {
        DsmError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for DsmError {
    fn from(e: serde_json::Error) -> Self {
        DsmError::Config(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, DsmError>;
