use thiserror::Error;

/// Errors raised by model construction and the optimization stages.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-positive argument: {0}")]
    NonPositive(&'static str),

    #[error("infeasible geometry: {0}")]
    InfeasibleGeometry(String),

    #[error("matrix is not Hermitian (asymmetry {0:e})")]
    NotHermitian(f64),

    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("degenerate expansion point: {0}")]
    Degenerate(String),

    #[error("{stage} subproblem infeasible ({family})")]
    Infeasible { stage: &'static str, family: String },

    #[error("{stage} solver failed: {detail}")]
    Solver { stage: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;
