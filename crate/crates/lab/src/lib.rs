//! IO, file formats, experiment orchestration, and plotting for the
//! semi-supervised poisoning lab. The pure computation lives in
//! `psl-core`; this crate adds everything that touches the filesystem
//! plus the sweep machinery behind the `psl` binary.

pub mod config;
pub mod csvio;
pub mod error;
pub mod formats;
pub mod plot;
pub mod runner;
pub mod sweep;

pub use config::ExperimentConfig;
pub use error::{LabError, Result};
