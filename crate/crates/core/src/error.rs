use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the simulation / training stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("joint q{joint} = {value} outside [{min}, {max}]")]
    JointLimit {
        /// 1-based joint number, matching the q1..q8 naming.
        joint: usize,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("environment protocol error (env {env}): {message}")]
    Protocol { env: usize, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
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

pub type Result<T> = std::result::Result<T, Error>;
