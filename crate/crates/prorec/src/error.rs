use thiserror::Error;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("not enough absent pairs to inject noise: requested {requested}, available {available}")]
    Capacity { requested: usize, available: usize },

    #[error("degenerate marginal: {side} entry {index} is zero")]
    DegenerateMarginal { side: &'static str, index: usize },

    #[error("marginals are infeasible: {0}")]
    Infeasible(String),

    #[error("instance too large for exact solver: {m}x{n} exceeds {limit} cells")]
    UnsupportedSize { m: usize, n: usize, limit: usize },

    #[error("numerical failure in {context}: {detail}")]
    Numerical { context: &'static str, detail: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse classification used by callers that map errors to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidArgument(_) | Error::ShapeMismatch { .. } => ErrorCategory::Config,
            Error::Parse { .. }
            | Error::EmptyDataset
            | Error::Capacity { .. }
            | Error::UndefinedMetric(_)
            | Error::Io(_) => ErrorCategory::Data,
            Error::DegenerateMarginal { .. }
            | Error::Infeasible(_)
            | Error::UnsupportedSize { .. }
            | Error::Numerical { .. } => ErrorCategory::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
