//! Core algorithms for cross-tokenizer knowledge distillation.
//!
//! The crate is organized around the pieces needed to distill a teacher
//! language model into a student that uses a different tokenizer:
//!
//! - [`distributions`]: probability-vector primitives (temperature softmax,
//!   zero padding, descending sort with permutation tracking).
//! - [`losses`]: cross-entropy, KL distillation, and the sorted-Wasserstein
//!   distillation loss, each with analytic gradients over student logits.
//! - [`ot`]: exact and entropic optimal-transport solvers used as oracles
//!   for the closed form and as the engine for non-uniform transport costs.
//! - [`tokenizer`]: two deliberately mismatched toy tokenizers plus
//!   vocabulary-overlap measurement and token edit distance.
//! - [`autodiff`]: a minimal reverse-mode tape over dense matrices.
//! - [`model`]: a tiny deterministic causal language model with a
//!   byte-exact checkpoint encoding.
//! - [`distill`]: the end-to-end teacher -> student pipeline: corpus
//!   generation, answer generation, step alignment, training, evaluation.
//!
//! Everything here is pure computation over `alloc`; file formats, the CLI,
//! and wall-clock benchmarking live in the companion `uld-cli` crate. The
//! crate builds without `std` (disable default features).

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod distill;
pub mod distributions;
pub mod error;
pub mod losses;
pub mod model;
pub mod ot;
pub mod tokenizer;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;
