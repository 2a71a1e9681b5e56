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

    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("sidecar {path}: {message}")]
    Sidecar { path: PathBuf, message: String },

    /// A data-model invariant does not hold. `frame` is the offending frame id
    /// when the violation is local to one frame.
    #[error("invalid instance: field `{field}`{}: {message}", frame.as_ref().map(|f| format!(" (frame {f})")).unwrap_or_default())]
    Invalid {
        field: String,
        frame: Option<String>,
        message: String,
    },

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid parameter `{name}`: {message}")]
    Parameter { name: String, message: String },

    #[error("matrix `{name}` is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { name: String, asymmetry: f64 },

    #[error("matrix `{name}` is indefinite (min eigenvalue {min_eigenvalue:e})")]
    Indefinite { name: String, min_eigenvalue: f64 },

    #[error("ill-conditioned system in {context} (condition estimate {condition:e})")]
    IllConditioned { context: String, condition: f64 },

    #[error("instance too large for enumeration: {0}")]
    TooLarge(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, frame: Option<&str>, message: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            frame: frame.map(str::to_owned),
            message: message.into(),
        }
    }

    pub(crate) fn param(name: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parameter {
            name: name.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
