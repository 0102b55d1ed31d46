use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CdmdError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CdmdError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{0} did not converge")]
    Convergence(&'static str),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("batch {index}: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<CdmdError>,
    },
}

impl CdmdError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CdmdError::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        CdmdError::Format { path: path.into(), reason: reason.into() }
    }

    /// True for failures of the numerical kernels, as opposed to bad input data
    /// or arguments.
    pub fn is_numerical(&self) -> bool {
        match self {
            CdmdError::Convergence(_) | CdmdError::Degenerate(_) => true,
            CdmdError::Batch { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
