//! Minimal differentiable-computation core.
//!
//! A [`tape::Tape`] records operations define-by-run and replays them in
//! reverse for gradients. Everything computes in f64; checkpoints store
//! f32 on disk. The layer zoo covers exactly what the scorer needs:
//! embeddings, FFN, char-CNN, LSTM cell, BiLSTM, Stack-LSTM and a
//! child-sum TreeLSTM.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;

pub use adam::{clip_global_norm, Adam};
pub use gradcheck::{finite_diff, GradCheck};
pub use params::{Init, ParamId, ParamStore, TapeParams};
pub use tape::{Gradients, Tape, Tensor, Var};
