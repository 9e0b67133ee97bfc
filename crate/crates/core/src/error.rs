//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HolonomyError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("value outside chart bounds: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("matrix inversion failed: {0}")]
    Singular(String),

    #[error("membership check failed: {0}")]
    Membership(String),

    #[error("spectral gap collapsed below floor: {0}")]
    DegeneracyCrossing(String),

    #[error("coinvariance condition violated: {0}")]
    Coinvariance(String),

    #[error("scenario descriptor invalid: {0}")]
    Descriptor(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HolonomyError>;
