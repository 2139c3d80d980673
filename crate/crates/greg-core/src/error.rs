//! Error type shared by every module of the core crate.

use alloc::string::String;
use core::fmt;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Failures surfaced by the numerical kernels.
///
/// Variants are coarse on purpose: callers branch on *kind* (bad input vs.
/// numerical breakdown), while the message carries the specifics.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Arguments violate a documented precondition (shape mismatch, degenerate
    /// geometry, out-of-range parameter).
    InvalidInput(String),
    /// A solver or integrator broke down (divergence, CFL violation, sign flip
    /// of a Jacobian, non-composable warps).
    Numerical(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::Numerical(msg) => write!(f, "numerical failure: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
