//! Tensor switching (TS) networks.
//!
//! A TS-ReLU unit makes the same on/off decision as an ordinary ReLU unit but,
//! when active, passes on a copy of its whole input instead of a single scalar.
//! This crate provides the tensor operators behind that construction, SS and
//! TS forward passes, their infinite-width equivalent kernels, three ways of
//! training TS networks (one-pass ridge regression, inverted backpropagation
//! and linear rotation-compression) and an experiment harness.

pub mod error;
pub mod harness;
pub mod kernels;
pub mod learning;
pub mod network;
pub mod tensor;

pub use error::{Error, Result};
pub use kernels::{KernelKind, KernelState};
pub use network::{ForwardTrace, Mode, NetworkSpec, Weights};
pub use tensor::DenseTensor;
