//! End-to-end semantic role labeling with an incremental transition
//! system: one left-to-right pass over the sentence identifies predicates
//! and attaches their arguments close-first, scored by a small built-in
//! neural network and decoded greedily or with beam search.

pub mod cli;
pub mod conll;
pub mod data;
pub mod decoder;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod nn;
pub mod oracle;
pub mod scorer;
pub mod synth;
pub mod trainer;
pub mod transition;

pub use error::{Error, Result};
