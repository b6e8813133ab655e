//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown site {0}")]
    UnknownSite(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("operator is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),
    #[error("state is not physical: {0}")]
    NonPhysicalState(String),
    #[error("Hilbert space too large: {0}")]
    DimensionCap(String),
    #[error("empty keep set for partial trace")]
    EmptyKeepSet,
    #[error("solver failed: {0}")]
    SolverFailure(String),
    #[error("uniqueness indeterminate: {0}")]
    Indeterminate(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("fit rejected: {0}")]
    FitRejected(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
