use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("edge {position}: node index {index} out of range for {n} nodes")]
    EdgeOutOfRange { position: usize, index: usize, n: usize },

    #[error("edge {position}: duplicate undirected edge ({u}, {v})")]
    DuplicateEdge { position: usize, u: usize, v: usize },

    #[error("edge {position}: self-loop on node {node}")]
    SelfLoop { position: usize, node: usize },

    #[error("edge {position}: weight {weight} must be finite and positive")]
    InvalidWeight { position: usize, weight: f64 },

    #[error("index {index} out of range (size {size})")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("dense size guard exceeded: {size} > {limit}")]
    SizeGuard { size: usize, limit: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("label {label} is outside the domain of the {loss} loss")]
    InvalidLabel { label: i64, loss: &'static str },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("column `{column}`: {message}")]
    Schema { column: String, message: String },

    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

/// Failure of a training run. Divergence carries the partial record so callers
/// can flush what was computed before the non-finite step.
#[derive(Debug, Error)]
pub enum RunError<T> {
    #[error(transparent)]
    Invalid(#[from] Error),

    #[error("non-finite loss or weights at step {step}")]
    Diverged { step: usize, partial: Box<T> },
}

impl<T> RunError<T> {
    pub fn diverged_at(&self) -> Option<usize> {
        match self {
            RunError::Diverged { step, .. } => Some(*step),
            RunError::Invalid(_) => None,
        }
    }

    pub fn map_partial<U>(self, f: impl FnOnce(T) -> U) -> RunError<U> {
        match self {
            RunError::Invalid(e) => RunError::Invalid(e),
            RunError::Diverged { step, partial } => RunError::Diverged {
                step,
                partial: Box::new(f(*partial)),
            },
        }
    }
}
