//! Code membership inference against transformer code encoders under
//! white-, gray- and black-box access.

pub mod blackbox;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graybox;
pub mod nn;
pub mod seeds;
pub mod whitebox;

pub use error::{Error, Result};
