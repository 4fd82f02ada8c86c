use std::path::PathBuf;

use crate::vector::ModelVector;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The minimizer oracle ran out of iterations. Carries the best iterate seen.
    #[error("minimizer did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    Convergence {
        best: ModelVector,
        grad_norm: f64,
        iterations: usize,
    },

    #[error("trace has no plateau: relative change {relative_change:.3} over the last {window} iterations")]
    NoPlateau { window: usize, relative_change: f64 },

    #[error("iterate diverged at run {run}, iteration {iteration}")]
    Divergence { run: usize, iteration: usize },

    #[error("config error at line {line}, key `{key}`: {message}")]
    Config { line: usize, key: String, message: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
