use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid agent count {0}: at least {1} agents are required")]
    InvalidAgentCount(usize, usize),

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("stopping policy {policy} cannot be evaluated on the {model} model")]
    PolicyMismatch { policy: String, model: &'static str },

    #[error("closed form unsupported for c = {0} (requires 0 < c < 1/2)")]
    UnsupportedRegime(f64),

    #[error("least-squares design matrix is rank deficient")]
    RankDeficient,

    #[error("mismatched cells: {0}")]
    MismatchedCells(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
