use thiserror::Error;

/// Errors produced across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid pair: {0}")]
    InvalidPair(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: usize, reason: String },

    #[error("certification failed: constraint {constraint} off by {violation:e}")]
    CertificationFailed { constraint: String, violation: f64 },

    #[error("solver failure: {0}")]
    Solver(String),

    #[error(
        "bound violated: instance {instance} reached {simulated:e} above certificate {certificate:e}"
    )]
    BoundViolated {
        instance: usize,
        simulated: f64,
        certificate: f64,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidParameter(msg.into()))
}
