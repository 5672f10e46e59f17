use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration does not belong to this domain: {0}")]
    DomainMismatch(String),

    #[error("enumeration of {free} free edges exceeds the cap of {cap}")]
    EnumerationTooLarge { free: usize, cap: usize },

    #[error("exploration failed: {0}")]
    Exploration(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
