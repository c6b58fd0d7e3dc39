use thiserror::Error;

/// Errors raised by the core algorithms.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition of an operation was not met.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("dimension mismatch in {op}: expected {expected}, got {actual}")]
    Dimension {
        op: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("normal equations are singular; use a ridge > 0")]
    Singular,

    #[error("invariant broken: {0}")]
    Invariant(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}

pub(crate) fn check_dim(op: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            op,
            expected,
            actual,
        })
    }
}
