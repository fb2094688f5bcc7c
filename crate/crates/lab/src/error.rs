//! Error type for the lab crate, mapping onto the CLI exit codes:
//! 1 for contract/config violations, 2 for I/O and format errors.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum LabError {
    #[error("{0}")]
    Core(#[from] psl_core::CoreError),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error at byte {offset}: {what}")]
    Format { offset: u64, what: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl LabError {
    pub fn config(msg: impl Into<String>) -> Self {
        LabError::Config(msg.into())
    }

    pub fn format(offset: u64, what: impl Into<String>) -> Self {
        LabError::Format { offset, what: what.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Core(_) | LabError::Config(_) => 1,
            LabError::Format { .. } | LabError::Io(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
