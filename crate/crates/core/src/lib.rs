//! Building blocks for robust feature representation learning: a small
//! reverse-mode autodiff engine, convolutional layers, an encoder/decoder
//! classifier with three loss heads, and the training and evaluation
//! machinery around it.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, the CLI and
//! anything touching the filesystem live in the `rfrl` companion crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
pub mod data;
pub mod explain;
pub mod gradcheck;
pub mod image;
mod linalg;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tape::{BinaryKind, CustomOp, Gradients, Tape, Var};
pub use tensor::{DType, Real, Tensor};
