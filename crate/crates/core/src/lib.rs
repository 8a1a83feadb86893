//! Multi-task classification of lexemes: part of speech plus inflection
//! class, predicted jointly from subword-tokenized surface forms by a
//! transformer encoder with two output heads.
//!
//! The crate covers the full pipeline: corpus ingestion and filtering,
//! miniparadigm augmentation, BPE tokenization, hierarchical label
//! encoding, the model itself with its own reverse-mode autodiff, training
//! with stochastic weight averaging, and evaluation with per-head masking.

pub mod augment;
pub mod bpe;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod labels;
pub mod manifest;
pub mod model;
pub mod numerics;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
