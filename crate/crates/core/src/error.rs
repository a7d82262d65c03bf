//! Error type shared by every module of the crate.

use std::path::PathBuf;

/// Errors raised while building models, sampling data, training or reporting.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration: incompatible shapes, bad hyperparameters, missing tasks.
    #[error("configuration error: {0}")]
    Config(String),

    /// A call that violates an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    /// A non-finite value appeared in a forward pass or a training signal.
    #[error("numeric error in `{op}`: {detail}")]
    Numeric { op: &'static str, detail: String },

    /// Malformed or inconsistent graph input files.
    #[error("ingestion error in {path}: {detail}")]
    Ingestion { path: PathBuf, detail: String },

    /// A sampler could not produce the requested examples.
    #[error("sampling error: {0}")]
    Sampling(String),

    /// The finite-difference oracle detected a non-deterministic objective.
    #[error("oracle error: {0}")]
    Oracle(String),

    /// Malformed checkpoint or run-record files.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn numeric(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Numeric {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
