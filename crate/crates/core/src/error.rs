use std::path::PathBuf;

use crate::tensor::Shape;

/// Errors raised by tensor operations, network assembly and I/O.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("{op}: invalid argument: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("{op}: degenerate output size for input {input}")]
    DegenerateOutput { op: &'static str, input: Shape },

    #[error("missing tensor `{0}` in weight store")]
    MissingTensor(String),

    #[error("tensor `{name}` has dims {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("label {label} at pixel {index} is out of range for {num_classes} classes")]
    LabelOutOfRange {
        label: u32,
        index: usize,
        num_classes: usize,
    },

    #[error("image {h}x{w} is too small; both sides must be at least {min}")]
    ImageTooSmall { h: usize, w: usize, min: usize },

    #[error(transparent)]
    Stf(#[from] crate::io::stf::StfError),

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
