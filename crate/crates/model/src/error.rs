use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

pub(crate) fn invalid(msg: impl Into<String>) -> ModelError {
    ModelError::InvalidArgument(msg.into())
}
