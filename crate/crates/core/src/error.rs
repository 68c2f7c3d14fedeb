use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid timing: {0}")]
    InvalidTiming(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}:{line}: {message} (`{content}`)")]
    Parse {
        path: PathBuf,
        line: usize,
        content: String,
        message: String,
    },

    #[error("{0} is not achievable")]
    NotAchievable(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    /// The message without the variant prefix, for re-wrapping.
    pub(crate) fn detail(&self) -> String {
        match self {
            Error::InvalidConfig(m) | Error::InvalidTiming(m) | Error::NotAchievable(m) => m.clone(),
            other => other.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
