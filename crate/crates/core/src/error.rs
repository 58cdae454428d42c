use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("non-finite objective value: {0}")]
    NonFinite(f64),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("line search stagnated after {halvings} halvings (J = {objective})")]
    Stagnation {
        halvings: usize,
        objective: f64,
        theta: Box<crate::networks::Theta>,
    },

    #[error("pruning would remove every hidden layer")]
    EmptyNetwork,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
