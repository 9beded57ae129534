use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("overflow evaluating {0}")]
    Overflow(String),

    #[error("divergence integral is infinite or did not stabilise: {0}")]
    DivergenceInfinite(String),

    #[error("optimizer did not converge: {message}")]
    NonConvergence { message: String, trace: Vec<f64> },

    #[error("no finite starting point for the optimizer")]
    NoFiniteStart,

    #[error("initial state has zero target density")]
    InitInvalid,

    #[error("chain too short: {len} draws, need at least {min}")]
    TooShort { len: usize, min: usize },

    #[error("matrix S is singular (min eigenvalue {0:e})")]
    SingularS(f64),

    #[error("normalisation underflow: max log value {0}")]
    Underflow(f64),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

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
        Error::Io(e.to_string())
    }
}
