use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The forward model produced NaN/Inf or left its admissible region.
    #[error("model diverged at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("operation not supported: {0}")]
    Unsupported(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// The sampler could not make progress (e.g. nothing accepted during burn-in).
    #[error("sampler aborted: {reason}")]
    SamplerAbort { reason: String },

    #[error("gradient check failed: relative error {rel_error:.3e} exceeds {tolerance:.1e}")]
    GradientCheck { rel_error: f64, tolerance: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("metadata error: {0}")]
    Metadata(String),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            found,
        }
    }
}

pub(crate) fn ensure_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::dim(context, expected, found))
    }
}
