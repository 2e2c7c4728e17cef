//! Crate-wide error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// Invalid code or model configuration (bad (n, k), non-power-of-two N, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument violates an operation's preconditions (length mismatch, negative variance, ...).
    #[error("argument error: {0}")]
    Argument(String),

    /// The request exceeds a hard capability guard (e.g. ML enumeration above k = 20).
    #[error("capability error: {0}")]
    Capability(String),

    /// An internal contract was violated (fully masked attention row, non-finite values, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Checkpoint or config file does not match the expected format.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
