use thiserror::Error;

/// Invalid numeric input to a pure math operation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{0} must not be negative")]
    Negative(&'static str),
    #[error("{0} out of range")]
    OutOfRange(&'static str),
}
