//! A small deep-learning stack built around trainable activation functions.
//!
//! The crate provides a reverse-mode autodiff tape over dense tensors, the
//! activation family it exists to study (fixed base functions, adaptively
//! scaled variants, and adaptive blending units with four normalization
//! schemes), the SMCN convolutional network family, CIFAR-style data
//! handling, optimizers and a checkpointing training loop, and the
//! instrumentation used to trace blending weights and pre-activation
//! statistics over the course of training.

pub mod activations;
pub mod error;
pub mod gradcheck;
pub mod params;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tape::{Tape, ValueId};
pub use tensor::Tensor;
