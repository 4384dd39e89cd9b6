use thiserror::Error;

/// Errors raised by the sampler.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("empty batch range")]
    EmptyRange,

    #[error("no points with positive weight")]
    NoEffectiveSamples,

    #[error("fewer than {needed} points available ({available})")]
    InsufficientPoints { needed: usize, available: usize },

    #[error("degenerate mixture component {0}")]
    DegenerateComponent(usize),

    #[error("too many aborted EM restarts at k = {k} ({aborted} of {restarts})")]
    TooManyAborts { k: usize, aborted: usize, restarts: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{failed} of {total} repetitions failed; summary requires at least 95% success")]
    TooManyFailures { failed: usize, total: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Short stable name, printed by the CLI on fatal errors.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NotSymmetric(_) => "NotSymmetric",
            Error::NotPositiveDefinite => "NotPositiveDefinite",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::InvalidMixture(_) => "InvalidMixture",
            Error::EmptyRange => "EmptyRange",
            Error::NoEffectiveSamples => "NoEffectiveSamples",
            Error::InsufficientPoints { .. } => "InsufficientPoints",
            Error::DegenerateComponent(_) => "DegenerateComponent",
            Error::TooManyAborts { .. } => "TooManyAborts",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::TooManyFailures { .. } => "TooManyFailures",
            Error::Parse(_) => "Parse",
            Error::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
