use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("length mismatch: expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite input to {0}")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("node {node} exceeded {limit} backtracking contractions at iteration {iter}")]
    BacktrackLimit { node: usize, iter: usize, limit: usize },

    #[error("iteration {iter}: {what}")]
    Diverged { iter: usize, what: String },

    #[error("reference solve did not converge: best KKT residual {best_residual:e} after {iters} iterations")]
    NoConvergence { best_residual: f64, iters: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
