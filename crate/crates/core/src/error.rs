use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Inputs are individually valid but do not fit together.
    #[error("usage error: {0}")]
    Usage(String),
    /// A numerical procedure failed (factorization, embedding, overflow).
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("strategy produced non-finite position {value} at time index {index}")]
    Strategy { index: usize, value: f64 },
    /// A model or agent specification violates its invariants.
    #[error("invalid specification: {0}")]
    Spec(String),
    /// A payoff failed a structural check (e.g. convexity).
    #[error("validation error: {0}")]
    Validation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
