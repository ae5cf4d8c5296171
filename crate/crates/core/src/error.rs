use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the pruning engine.
///
/// The variants split into two families that the command line maps onto
/// distinct exit codes: malformed or unreadable inputs (`Io`, `Format`) and
/// violated operation preconditions (`Contract`, `NonFinite`, `InsufficientData`).
#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid input format: {0}")]
    Format(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 for input errors, 3 for contract violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Format(_) => 2,
            Error::Contract(_) | Error::NonFinite(_) | Error::InsufficientData(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
