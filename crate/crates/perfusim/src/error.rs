//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by mesh/tree I/O, solvers and the scenario pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A file did not conform to its documented text format.
    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Geometric inconsistency (degenerate cell, porosity > 1, ...).
    #[error("geometry error: {0}")]
    Geometry(String),

    /// An argument violated an operation contract (size mismatch, bad range).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration value.
    #[error("configuration error: {0}")]
    Config(String),

    /// Synthetic tree generation could not satisfy its geometric constraints.
    #[error("tree generation error: {0}")]
    Generation(String),

    /// An iterative solver failed to converge or hit a singular system.
    #[error("solver error: {0}")]
    Solver(String),

    /// Time step violates the stability bound; the caller must reduce dt.
    #[error("CFL violation: dt = {dt:.6e} exceeds the stable bound {bound:.6e}")]
    CflViolation { dt: f64, bound: f64 },

    /// A state invariant was violated during time integration.
    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
