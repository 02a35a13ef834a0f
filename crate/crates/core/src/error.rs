//! Crate-wide error type.

use std::path::PathBuf;

/// Errors surfaced by registration, metrics, and I/O operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Spatial shapes of two grids disagree where they must match.
    #[error("shape mismatch: expected {expected:?}, got {got:?} ({context})")]
    ShapeMismatch {
        expected: [usize; 3],
        got: [usize; 3],
        context: &'static str,
    },

    /// An operation's precondition was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Configuration rejected at load or validation time.
    #[error("invalid config: {0}")]
    Config(String),

    /// A mask required to be non-empty was empty.
    #[error("empty mask: {0}")]
    EmptyMask(&'static str),

    /// A landmark fell outside the volume bounds.
    #[error("landmark {index} at {point:?} mm is outside the volume")]
    LandmarkOutOfBounds { index: usize, point: [f64; 3] },

    /// Malformed or unsupported NIfTI payload.
    #[error("nifti error in {path}: {message}")]
    Nifti { path: PathBuf, message: String },

    /// Checkpoint file rejected.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Dataset manifest rejected.
    #[error("manifest error: {0}")]
    Manifest(String),

    /// Training diverged to a non-finite loss.
    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn nifti(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Nifti {
            path: path.into(),
            message: message.into(),
        }
    }
}
