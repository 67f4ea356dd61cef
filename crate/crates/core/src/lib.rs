//! Distributed mirror descent with adaptively quantized communication and
//! delayed subgradients.

pub mod engine;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod network;
pub mod problems;
pub mod quantizer;
pub mod vecops;

pub use error::{Error, Result};
