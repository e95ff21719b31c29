use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition or invariant on an input value does not hold.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A data file could not be parsed or violates the tick invariants.
    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate sweep: {0}")]
    DegenerateSweep(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invalid(_) | Error::Data { .. } | Error::Json(_) | Error::Config(_) => 2,
            Error::InsufficientPoints { .. } => 2,
            Error::Io { .. } => 3,
            Error::Numerical(_) | Error::DegenerateSweep(_) => 4,
        }
    }
}
