use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front-ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {reason}")]
    Record {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}:{line}: duplicate id `{id}`")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },

    #[error("{path}:{line}: expected {expected} embedding values, found {found}")]
    EmbeddingDim {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("class `{0}` has no examples; class weight undefined")]
    MissingClass(&'static str),

    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("{0}: non-finite value")]
    NonFinite(&'static str),

    #[error("empty input sequence")]
    EmptyInput,

    #[error("cannot aggregate an empty reply set")]
    NoReplies,

    #[error("thread `{0}` has no gold label")]
    MissingGold(String),

    #[error("thread `{id}`: {source}")]
    Thread {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint holds a `{found}` model, expected `{expected}`")]
    ArchitectureMismatch { expected: String, found: String },

    #[error("checkpoint tensor `{name}`: {reason}")]
    TensorShape { name: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn in_thread(self, id: &str) -> Self {
        Error::Thread {
            id: id.to_string(),
            source: Box::new(self),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::Shape { .. } | Error::NonScalarLoss(_) | Error::NonFinite(_) => {
                ErrorClass::Numeric
            }
            Error::Thread { source, .. } | Error::Stage { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }
}
