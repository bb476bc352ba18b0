use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graphon: {0}")]
    InvalidGraphon(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("coordinate out of [0, 1]: ({u}, {v})")]
    OutOfRange { u: f64, v: f64 },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("empty edge list: {0}")]
    EmptyInput(PathBuf),

    #[error("invalid motif: {0}")]
    InvalidMotif(String),

    #[error("labeling space too large: Q^k = {q}^{k} exceeds {limit}")]
    LabelingGuard { q: usize, k: usize, limit: usize },

    #[error("quadrature did not converge: estimated error {achieved:e} above tolerance {tolerance:e}")]
    Quadrature { achieved: f64, tolerance: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("all fits failed: {0}")]
    AllFitsFailed(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
