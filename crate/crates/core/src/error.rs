use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by region construction, estimation and the simulation harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("curves live on different grids")]
    GridMismatch,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("kernel is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("kernel is not positive semi-definite (eigenvalue {value:e} below -{tol:e})")]
    NotPsd { value: f64, tol: f64 },

    #[error("truncation {requested} out of range 1..={available}")]
    TruncationOutOfRange { requested: usize, available: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("root bracketing failed for {what}: f({lo:e}) = {f_lo:e}, f({hi:e}) = {f_hi:e}")]
    Bracket {
        what: &'static str,
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
    },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

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
