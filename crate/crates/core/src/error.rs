use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("reference signals are linearly dependent")]
    DegenerateReferences,

    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("subject {subject} appears in partitions {first} and {second}")]
    SubjectLeakage {
        subject: u32,
        first: String,
        second: String,
    },

    #[error("training aborted at step {step}: {reason}")]
    TrainingAborted { step: usize, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }
}
