use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("intensity ordering violated: need signal > decoy1 > decoy2 >= 0, got {signal} / {decoy1} / {decoy2}")]
    IntensityOrdering {
        signal: f64,
        decoy1: f64,
        decoy2: f64,
    },

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("tally structure mismatch: {0}")]
    StructureMismatch(String),

    #[error("table error: {0}")]
    Table(String),

    #[error("linear program infeasible: {0}")]
    Infeasible(String),

    #[error("linear program solver failure: {0}")]
    Solver(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("session error: {0}")]
    Session(String),

    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn io(path: impl AsRef<std::path::Path>, err: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            message: err.to_string(),
        }
    }

    /// True for failures of the file system rather than of the input.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
