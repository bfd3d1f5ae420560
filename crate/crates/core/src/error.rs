use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("anchor QP did not converge (manifold {manifold}, draw {draw})")]
    AnchorNonConvergence { manifold: usize, draw: usize },

    #[error("manifold {manifold}: {source}")]
    Manifold {
        manifold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite activation at layer {layer}")]
    NonFinite { layer: usize },

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("subset `{0}` is empty")]
    EmptySubset(String),

    #[error("subset `{subset}`: classes without enough examples (class, available): {deficient:?}")]
    InsufficientExamples {
        subset: String,
        deficient: Vec<(usize, usize)>,
    },

    #[error("no checkpoint stored for epoch {0}")]
    MissingCheckpoint(usize),

    #[error("checkpoint for epoch {0} already written")]
    CheckpointExists(usize),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    #[error("refusing to overwrite {0} (pass --force)")]
    WouldOverwrite(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_manifold(self, manifold: usize) -> Self {
        match self {
            Error::AnchorNonConvergence { draw, .. } => Error::AnchorNonConvergence { manifold, draw },
            other => Error::Manifold {
                manifold,
                source: Box::new(other),
            },
        }
    }

    /// Coarse classification used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidInput(_)
            | Error::Config(_)
            | Error::EmptySubset(_)
            | Error::InsufficientExamples { .. }
            | Error::MissingCheckpoint(_) => ErrorKind::Config,
            Error::AnchorNonConvergence { .. }
            | Error::NonFinite { .. }
            | Error::Divergence { .. }
            | Error::Numerical(_) => ErrorKind::Numerical,
            Error::Manifold { source, .. } => source.kind(),
            Error::CheckpointExists(_)
            | Error::Format(_)
            | Error::Truncated { .. }
            | Error::WouldOverwrite(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_) => ErrorKind::Io,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numerical,
    Io,
}
