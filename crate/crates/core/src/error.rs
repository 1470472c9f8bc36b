use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input data.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("empty model: every type was removed by preprocessing")]
    EmptyModel,

    #[error("invalid value for parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("unknown {kind} label `{label}`; valid labels are: {valid}")]
    UnknownLabel {
        kind: &'static str,
        label: String,
        valid: String,
    },

    /// Numerical failure inside the sampler or a derived quantity.
    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("chain digest mismatch: chain was fitted to {chain}, model has {model}")]
    DigestMismatch { chain: String, model: String },

    #[error("chain file format error: {0}")]
    Format(String),

    #[error("interval method `{0}` is not implemented; supported methods: percentile, chen-shao")]
    UnsupportedMethod(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the failure comes from the model or the numerics rather than
    /// from reading, writing or validating inputs.
    pub fn is_model_failure(&self) -> bool {
        matches!(self, Error::Numeric(_) | Error::EmptyModel)
    }
}
