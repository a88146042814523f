use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("empty support: {0}")]
    EmptySupport(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("format error in {path}: field `{field}`: {msg}")]
    Format {
        path: PathBuf,
        field: String,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format { .. } | Error::Io { .. } | Error::Degenerate(_) => 2,
            _ => 3,
        }
    }
}
