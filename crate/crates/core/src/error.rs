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

    /// A WAV file that is readable but outside the supported format.
    #[error("wav format error ({field}): {message}")]
    Format { field: &'static str, message: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// The operation is mathematically undefined for the given input.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("could not resolve audio for utterance(s): {}", .0.join(", "))]
    Resolution(Vec<String>),

    /// Two structures that must agree (parameter shapes, checkpoint layout) do not.
    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// Short machine-readable category, used in failure records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Argument(_) => "argument",
            Error::Domain(_) => "domain",
            Error::Lookup(_) => "lookup",
            Error::Parse { .. } => "parse",
            Error::Resolution(_) => "resolution",
            Error::Consistency(_) => "consistency",
            Error::Checkpoint(_) => "checkpoint",
            Error::Config(_) => "config",
            Error::Json(_) => "json",
        }
    }
}
