use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{}: {reason}", path.display())]
    Data { path: PathBuf, reason: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error(
        "gradient check failed: max relative error {max_rel_error:.3e} exceeds {tolerance:.1e}"
    )]
    Gradcheck { max_rel_error: f64, tolerance: f64 },

    #[error("unknown parameter group `{0}` (expected `backbone` or `mixture`)")]
    UnknownGroup(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("parameter `{0}` is trainable but has no gradient")]
    MissingGrad(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn data(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the `mixact` binary.
    ///
    /// 2 config, 3 data, 4 numeric failure, 5 gradcheck failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownGroup(_) => 2,
            Error::Data { .. } | Error::LabelOutOfRange { .. } | Error::Checkpoint(_) => 3,
            Error::NonFinite { .. } => 4,
            Error::Gradcheck { .. } => 5,
            Error::Shape { .. } | Error::NotScalar(_) | Error::MissingGrad(_) | Error::Io(_) => 1,
        }
    }
}
