use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated a documented precondition (shape, range, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("integration diverged at step {step}: non-finite state")]
    Divergence { step: usize },

    #[error("unknown {what} `{name}`")]
    Lookup { what: &'static str, name: String },

    #[error("inner-product matrix is not positive definite (min eigenvalue {min_eigenvalue:e}); increase the ridge")]
    Indefinite { min_eigenvalue: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("spectral error: {0}")]
    Spectral(String),

    #[error("threshold error: {0}")]
    Threshold(String),

    #[error("no usable data: {0}")]
    EmptyData(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
