//! File formats, experiment harness and command-line driver.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod pgm;
pub mod report;
pub mod tensor_io;

pub use error::{Error, Result};
