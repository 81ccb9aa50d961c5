use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad category of a failure, used by the CLI to pick an exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Solver,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in `{operand}`: expected {expected}, found {found}")]
    Dimension {
        operand: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in `{0}`")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("infeasible capped simplex: n = {n}, tau = {tau} (need n * tau >= 1)")]
    Infeasible { n: usize, tau: f64 },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("matrix is not symmetric positive definite; factorization failed")]
    Factorization,

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    Asymmetric(f64),

    #[error("negative curvature {0:e} along a feasible direction; kernel matrix is not PSD")]
    NegativeCurvature(f64),

    #[error("kernel residual {value:e} for class `{label}` is below the clamp threshold")]
    BrokenGram { label: String, value: f64 },

    #[error("duplicate class label `{0}`")]
    DuplicateLabel(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: row {row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidConfig(_) => ErrorKind::Config,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Data { .. }
            | Error::Json(_)
            | Error::Empty(_)
            | Error::DuplicateLabel(_)
            | Error::Dimension { .. }
            | Error::NonFinite(_) => ErrorKind::Data,
            Error::Infeasible { .. }
            | Error::Degenerate(_)
            | Error::Factorization
            | Error::Asymmetric(_)
            | Error::NegativeCurvature(_)
            | Error::BrokenGram { .. } => ErrorKind::Solver,
        }
    }

    pub(crate) fn dim(operand: &'static str, expected: usize, found: usize) -> Self {
        Error::Dimension {
            operand,
            expected,
            found,
        }
    }
}
