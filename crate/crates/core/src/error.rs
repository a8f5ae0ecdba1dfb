use thiserror::Error;

/// Errors raised by the estimators and solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("misconfigured hierarchy: {0}")]
    Hierarchy(String),

    #[error("simulation diverged at step {step}: {what}")]
    Diverged { step: usize, what: String },

    #[error("configuration mismatch: {0}")]
    Config(String),

    #[error("unsupported dimension {0}; the control solver handles d = 1 only")]
    UnsupportedDimension(usize),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("degenerate rates: {0}")]
    DegenerateRates(String),

    #[error("inadmissible rates: {0}")]
    Inadmissible(String),

    #[error("rate fit failed: {0}")]
    Fit(String),

    #[error("missing variance estimate for {0}")]
    MissingPredecessor(String),

    #[error("cannot form a relative constraint: {0}")]
    ZeroQoi(String),
}

pub type Result<T> = std::result::Result<T, Error>;
