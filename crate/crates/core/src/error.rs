use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document {path}: {message}")]
    Parse { path: PathBuf, message: String },

    /// A bundle or dataset failed validation; `field` names the offending entry.
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },

    #[error("shape mismatch in `{field}`: expected {expected}, found {found}")]
    Shape {
        field: String,
        expected: usize,
        found: usize,
    },

    #[error("input geometry {channels}x{samples} is unsupported: {message}")]
    Geometry {
        channels: usize,
        samples: usize,
        message: String,
    },

    #[error("non-finite value during {stage} (epoch {epoch}, step {step})")]
    Divergence {
        stage: &'static str,
        epoch: usize,
        step: usize,
    },
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
