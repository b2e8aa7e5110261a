//! Kinetic Ising simulation and lattice topology reconstruction.
//!
//! * [`dynamics`]: random lattices, ±1 initial states and the discrete
//!   Glauber update.
//! * [`dataset`]: train/test/generalization splits and their file format.
//! * [`nn`]: a small convolutional network written from scratch.
//! * [`train`]: mini-batch training, the low→high temperature curriculum,
//!   gradient-norm traces and resumable checkpoints.
//! * [`eval`]: decoding, accuracy, entropy confidence and linear fits.
//! * [`baseline`]: lagged-correlation reconstruction for comparison.

// `!(x > 0.0)` style checks are meant to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
mod container;
pub mod dataset;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pairs;
pub mod par;
pub mod train;

pub use error::{Error, Result};
