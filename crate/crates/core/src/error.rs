use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("no connected Erdős–Rényi sample after {attempts} attempts (n = {n}, p = {p}); p is too small for n")]
    DisconnectedGraph { n: usize, p: f64, attempts: usize },

    #[error("invalid mixing matrix: {0}")]
    InvalidMixing(String),

    #[error("spectral gap {gap:e} is numerically zero; the graph behaves as disconnected")]
    VanishingSpectralGap { gap: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("linear solve residual {residual:e} exceeds tolerance")]
    LinearSolve { residual: f64 },

    #[error("{solver} did not converge within {limit} iterations")]
    NotConverged { solver: &'static str, limit: usize },

    #[error("iterates diverged at iteration {iteration} (norm {norm:e})")]
    Diverged { iteration: usize, norm: f64 },

    #[error("subdifferential query not supported by {0}")]
    SubdifferentialUnsupported(&'static str),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("dataset has label {label} at row {row}; classification requires labels in {{-1, +1}}")]
    NonBinaryLabel { row: usize, label: f64 },

    #[error("matrix invariant violated: {0}")]
    MatrixInvariant(String),

    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
