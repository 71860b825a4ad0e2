use std::path::PathBuf;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs} and {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },

    #[error("{op}: {msg}")]
    InvalidShape { op: &'static str, msg: String },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("batch_norm in train mode needs a batch of at least 2 (got {0})")]
    BatchTooSmall(usize),

    #[error("backward needs a scalar loss, got shape {0}")]
    NonScalarLoss(Shape),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("{module}: {source}")]
    InModule {
        module: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid network config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid_shape(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidShape {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn invalid_arg(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }

    /// Wrap an error with the name of the module that produced it.
    pub fn in_module(self, module: impl Into<String>) -> Self {
        Error::InModule {
            module: module.into(),
            source: Box::new(self),
        }
    }
}

/// Attach a module name to the error side of a result.
pub(crate) trait Context<T> {
    fn within(self, module: &str) -> Result<T>;
}

impl<T> Context<T> for Result<T> {
    fn within(self, module: &str) -> Result<T> {
        self.map_err(|e| e.in_module(module))
    }
}
