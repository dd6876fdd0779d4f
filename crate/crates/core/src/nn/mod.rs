//! Minimal dense-tensor training engine: tape-based reverse-mode
//! differentiation, transformer blocks and AdamW.
//!
//! Everything runs single-threaded in `f32`, so a fixed seed reproduces a
//! training run bit for bit.

pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use optim::{AdamW, AdamWConfig};
pub use params::{ParamId, ParamSet};
pub use tape::{Segment, Tape, Var};
pub use tensor::Tensor;
