use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on axis {axis}: expected {expected}, found {found}")]
    Dimension {
        op: &'static str,
        axis: usize,
        expected: usize,
        found: usize,
    },

    #[error("{op}: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid config field `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("corrupt file {}: {msg}", path.display())]
    Corrupt { path: PathBuf, msg: String },

    #[error("co-registration mismatch: {0}")]
    CoRegistration(String),

    #[error("invalid label: {0}")]
    Label(String),

    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),

    #[error("metric undefined: {0}")]
    Metric(String),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Shape {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Corrupt {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code used by the command-line front end:
    /// 1 usage/config, 2 data, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Contract(_) => 1,
            Error::NonFinite(_) | Error::Metric(_) => 3,
            Error::Dimension { .. }
            | Error::Shape { .. }
            | Error::Io { .. }
            | Error::Corrupt { .. }
            | Error::CoRegistration(_)
            | Error::Label(_)
            | Error::ParamMismatch(_) => 2,
        }
    }
}
