use std::path::PathBuf;

use thiserror::Error;

use crate::datasets::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A map whose values cannot be normalized or scored (all zero, constant, or empty mass).
    #[error("degenerate map: {0}")]
    DegenerateMap(String),

    /// A numeric argument outside the domain of a formula, e.g. `ln(0)`.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("synsets `{0}` and `{1}` share no common ancestor")]
    NoCommonAncestor(String, String),

    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("{0}")]
    Validation(ValidationReport),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateMap(msg.into())
    }

    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            format,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
