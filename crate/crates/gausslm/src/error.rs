//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by frame construction, estimation and verification.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A requested moment or expectation does not exist (the defining
    /// integral diverges), e.g. `E f^s` for a log-convex `f` with
    /// `I + sA` not positive definite.
    #[error("not integrable: {0}")]
    NotIntegrable(String),

    /// A Monte Carlo estimate failed to stabilize within the sample budget.
    #[error("estimate diverged: {0}")]
    Divergent(String),

    /// The requested backend cannot evaluate this functional.
    #[error("unsupported backend: {0}")]
    UnsupportedBackend(String),

    /// A function spec, plan, or frame document failed to parse.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for the two failure modes that make an inequality vacuous
    /// rather than wrong: a divergent moment or a non-integrable one.
    pub fn is_vacuous(&self) -> bool {
        matches!(self, Error::NotIntegrable(_) | Error::Divergent(_))
    }
}
