use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GgrError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{what} exceeds cap {cap} (requested {requested})")]
    CapExceeded {
        what: &'static str,
        cap: usize,
        requested: usize,
    },
    #[error("evaluation budget exceeded: {0}")]
    Budget(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("scattering solver failed: {0}")]
    Unmatched(String),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, GgrError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(GgrError::InvalidParameter(msg.into()))
}
