//! Error types shared by the compute core.

use alloc::string::String;
use core::fmt;

/// Errors surfaced by core operations.
///
/// `Contract` means the caller broke a documented precondition (bad shapes,
/// out-of-range parameters, empty inputs). `NonFinite` means an op produced
/// NaN or Inf; values are checked after every tensor op so a numeric fault
/// is reported at its source instead of propagating silently.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoreError {
    Contract(String),
    NonFinite { op: &'static str },
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Contract(msg) => write!(f, "contract violation: {msg}"),
            CoreError::NonFinite { op } => write!(f, "numeric fault: non-finite output in op `{op}`"),
        }
    }
}

impl core::error::Error for CoreError {}

pub type Result<T> = core::result::Result<T, CoreError>;

/// Shorthand for building a `Contract` error from format args.
#[macro_export]
macro_rules! contract_err {
    ($($arg:tt)*) => {
        $crate::CoreError::Contract(alloc::format!($($arg)*))
    };
}

/// Bails with a `Contract` error unless the condition holds.
#[macro_export]
macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        if !$cond {
            return Err($crate::contract_err!($($arg)*));
        }
    };
}
