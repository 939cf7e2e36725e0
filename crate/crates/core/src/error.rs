use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library. Variants map onto the failure classes the
/// CLI turns into exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for `{field}`: {reason}")]
    ParameterDomain { field: String, reason: String },

    #[error("empty request: {0}")]
    EmptyRequest(String),

    #[error("insufficient data: {what} needs at least {needed} values, got {got}")]
    InsufficientData {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("cannot read `{}`: {source}", path.display())]
    Ingestion {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {origin} at row {row}: {reason}")]
    Parse {
        origin: String,
        row: usize,
        reason: String,
    },

    #[error("numerical failure at c = {c}: {reason}")]
    NumericalFailure { c: f64, reason: String },

    #[error("objective diverged at iteration {iteration} (c = {c}): MSEM is infinite")]
    DivergedObjective { iteration: usize, c: f64 },

    #[error("cannot compare calibrations with different targets ({left} vs {right})")]
    MismatchedTargets { left: f64, right: f64 },

    #[error("i/o error writing `{}`: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::ParameterDomain {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
