use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidShape { op: &'static str, msg: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("{what} needs at least {needed} timesteps, got {got}")]
    TooFewTimesteps {
        what: &'static str,
        needed: usize,
        got: usize,
    },

    #[error("{0}: expected a binary spike tensor")]
    NonBinary(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },

    #[error("event stream is empty")]
    EmptyStream,

    #[error("non-finite loss in component `{component}` (value {value})")]
    NonFinite { component: &'static str, value: f64 },

    #[error("dense stage hooks are disabled for this model")]
    HooksDisabled,

    #[error("architecture mismatch: checkpoint holds {found}, expected {expected}")]
    ArchMismatch { expected: String, found: String },

    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            what,
            msg: msg.into(),
        }
    }
}
