use std::path::PathBuf;

use crate::engine::TraceRecord;
use crate::problem::ReferenceSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller passed arguments outside an operation's contract.
    #[error("usage error: {0}")]
    Usage(String),

    /// A numeric input is outside the mathematical domain (NaN, Inf, negative constant, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("reference solver did not reach tolerance {tol:e} after {iterations} iterations (best gradient norm {:e})", .best.grad_norm)]
    Unconverged {
        tol: f64,
        iterations: u64,
        best: Box<ReferenceSolution>,
    },

    #[error("run diverged at iteration {iteration}: ‖x‖ = {norm:e}")]
    Diverged {
        iteration: usize,
        norm: f64,
        trace: Vec<TraceRecord>,
    },

    /// An internal consistency check failed; this indicates a bug.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
