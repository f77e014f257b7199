use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used to map failures onto process exit codes and
/// FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Malformed, inconsistent or degenerate input data.
    Data,
    /// An iterative or algebraic routine failed to produce a finite answer.
    Numerical,
    /// Filesystem or encoding failure.
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported spherical-harmonic degree {0} (maximum is 3)")]
    UnsupportedShDegree(u32),
    #[error("degenerate rotation: quaternion norm {0:e} is too small to normalize")]
    DegenerateRotation(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: String,
        got: String,
    },
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid render state: {0}")]
    InvalidState(String),
    #[error("insufficient data: need at least {needed} correspondences, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("no consensus: best hypothesis had {best_inliers} inliers (need at least {needed})")]
    NoConsensus { best_inliers: usize, needed: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image encoding: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Numerical(_) | Error::NoConsensus { .. } => ErrorKind::Numerical,
            Error::Io(_) | Error::Image(_) => ErrorKind::Io,
            _ => ErrorKind::Data,
        }
    }

    pub(crate) fn shape(what: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            what,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}
