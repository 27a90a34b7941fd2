use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum IceError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("matrix is numerically singular (condition estimate {0:.3e})")]
    Singular(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("degenerate parameter: {0}")]
    Degenerate(String),

    #[error("degenerate score: |nu| = {0:.3e}, extracted signal is uncorrelated with its score")]
    DegenerateScore(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("solver breakdown: {0}")]
    Breakdown(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed input: {0}")]
    Format(String),
}

pub type Result<T, E = IceError> = std::result::Result<T, E>;
