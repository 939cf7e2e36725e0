use std::path::PathBuf;

use thiserror::Error;

pub const EXIT_INVALID: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_IO: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Lib(#[from] irtrel::Error),

    #[error("{0}")]
    Usage(String),

    #[error("invalid {origin}: {message}")]
    Config { origin: String, message: String },

    #[error("cannot read `{}`: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot write `{}`: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The result was written but sits on the boundary of the search interval.
    #[error("{0}")]
    Infeasible(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        use irtrel::Error as E;
        match self {
            CliError::Lib(E::Ingestion { .. } | E::Output { .. }) => EXIT_IO,
            CliError::Lib(E::NumericalFailure { .. } | E::DivergedObjective { .. }) => EXIT_NUMERICAL,
            CliError::Lib(_) | CliError::Usage(_) | CliError::Config { .. } => EXIT_INVALID,
            CliError::Read { .. } | CliError::Write { .. } => EXIT_IO,
            CliError::Infeasible(_) => EXIT_INFEASIBLE,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
