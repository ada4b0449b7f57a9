//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's contract (dimension mismatch,
    /// out-of-range argument, non-finite input, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration (solver, covering sequence, experiment spec).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The model could not produce moments at the requested point.
    #[error("moment evaluation failed: {0}")]
    Eval(String),

    /// The de-meaned quasi-Newton design matrix stayed rank deficient
    /// after retrying with fresh directions.
    #[error("quasi-Newton design rank deficient (smallest singular value {sigma_min:.3e})")]
    RankDeficient {
        /// Smallest singular value of the last rejected design.
        sigma_min: f64,
    },

    /// The solver aborted mid-run; the trace collected so far is attached.
    #[error("solver failed after {} iterations: {reason}", trace.len())]
    Solver {
        /// Why the run aborted.
        reason: String,
        /// Per-iteration records collected before the failure.
        trace: Vec<crate::solver::IterationRecord>,
    },

    /// An experiment could not produce a summary (e.g. every replication failed).
    #[error("experiment failed: {0}")]
    Experiment(String),

    /// Underlying I/O failure when reading configs or writing reports.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn eval(msg: impl Into<String>) -> Self {
        Error::Eval(msg.into())
    }
}
