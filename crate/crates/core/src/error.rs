use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, RestoreError>;

#[derive(Debug, Error)]
pub enum RestoreError {
    #[error("invalid image lattice: {0}")]
    InvalidGrid(String),

    #[error("lattice mismatch: expected side {expected}, got {actual}")]
    SideMismatch { expected: usize, actual: usize },

    #[error("relative error undefined: the new iterate is identically zero")]
    ZeroNorm,

    #[error("parameter out of range: {0}")]
    Parameter(String),

    #[error("kernel of size {rows}x{cols} does not fit a lattice of side {side}")]
    KernelTooLarge { rows: usize, cols: usize, side: usize },

    #[error("operator is only defined for the Huber family")]
    UnsupportedRegularizer,

    #[error("step size denominator is not positive ({0:e})")]
    NonPositiveCurvature(f64),

    #[error("iteration diverged: non-finite iterate at step {0}")]
    Diverged(usize),

    #[error("conjugate gradients did not converge in {iters} iterations (relative residual {residual:e})")]
    CgNotConverged { iters: usize, residual: f64 },

    #[error("estimated regularization parameter is not positive ({0:e})")]
    NonPositiveBeta(f64),

    #[error("malformed image header: {0}")]
    MalformedHeader(String),

    #[error("unsupported maxval {0} (only 8-bit grayscale is supported)")]
    UnsupportedMaxval(u32),

    #[error("truncated pixel data: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("malformed kernel file: {0}")]
    MalformedKernel(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RestoreError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RestoreError::Io {
            path: path.into(),
            source,
        }
    }
}
