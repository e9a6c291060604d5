use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A malformed line in a text input; `row` is the 1-based line number.
    #[error("{}: line {row}: {message}", path.display())]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch ({context}): expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("identity {identity} has {available} sample(s) but {required} are required")]
    InsufficientSamples {
        identity: usize,
        available: usize,
        required: usize,
    },

    #[error("impossible pair composition: {0}")]
    ImpossibleComposition(String),

    #[error("index {index} out of range for {len} samples")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("loss became non-finite during epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("zero-norm vector at index {index}")]
    ZeroNorm { index: usize },

    #[error("logistic regression (C = {c:e}) did not converge after {iterations} iterations; gradient norm {grad_norm:.3e}")]
    NonConvergence {
        c: f64,
        iterations: usize,
        grad_norm: f64,
    },

    #[error("degenerate data: {0}")]
    Degenerate(String),
}

impl Error {
    /// Stable machine-readable tag, used as the prefix of CLI diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Format(_) => "format",
            Error::InvalidInput(_) => "invalid-input",
            Error::DimensionMismatch { .. } => "dimension-mismatch",
            Error::InsufficientSamples { .. } => "insufficient-samples",
            Error::ImpossibleComposition(_) => "impossible-composition",
            Error::IndexOutOfRange { .. } => "index-out-of-range",
            Error::NonFinite(_) => "non-finite",
            Error::NonFiniteLoss { .. } => "non-finite-loss",
            Error::ZeroNorm { .. } => "zero-norm",
            Error::NonConvergence { .. } => "non-convergence",
            Error::Degenerate(_) => "degenerate",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
