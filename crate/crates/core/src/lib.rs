//! Deterministic compute core for the semi-supervised poisoning lab.
//!
//! Everything in this crate is pure in-memory computation: a small dense
//! tensor library with reverse-mode autodiff ([`numgrad`]), synthetic image
//! data ([`datakit`]), weak/strong augmentation pipelines ([`augment`]),
//! poison construction ([`poisonforge`]), the supervised and FixMatch-style
//! trainers ([`trainers`]), and the metric suite ([`evalkit`]).
//!
//! The crate is `no_std` (alloc required). File formats, CSV emission, the
//! CLI, and sweep orchestration live in the companion `psl-lab` crate.
//!
//! Determinism contract: every function that consumes randomness takes an
//! explicit seed, and identical seeds produce bit-identical results. All
//! reductions run in a fixed order on a single thread.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod augment;
pub mod datakit;
pub mod error;
pub mod evalkit;
pub mod model;
pub mod numgrad;
pub mod oracle;
pub mod poisonforge;
pub mod rng;
pub mod trainers;

pub use error::{CoreError, Result};
