//! Transformer-aware gradient compression for sharded data-parallel training.
//!
//! The crate is organised bottom-up:
//!
//! * [`codec`] packs presence indices and count sketches, and decodes reduced
//!   sketches by peeling with an estimation fallback.
//! * [`sparsifier`] zeroes the smallest-magnitude gradient entries and keeps
//!   the discarded mass in a per-rank residual accumulator.
//! * [`collectives`] simulates a rank group with deterministic collectives and
//!   exact traffic accounting.
//! * [`hook`] runs the per-shard compressed exchange, the uncompressed
//!   baseline, layer-selective policies and the communication-volume model.
//! * [`bench`] runs seeded Monte-Carlo round trips and traffic probes.
//! * [`trainer`] is a desk-scale harness: a small tape autodiff, a character
//!   level decoder transformer and a data-parallel training loop that compares
//!   gradient paths.

pub mod bench;
pub mod codec;
pub mod collectives;
pub mod hook;
pub mod sparsifier;
pub mod trainer;

mod error;

pub use error::{Error, Result};
