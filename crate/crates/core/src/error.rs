use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl GeomError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        GeomError::InvalidArgument(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        GeomError::Degenerate(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, GeomError>;
