//! Blind unmixing of FTIR absorbance cubes with a patch-wise convolutional
//! autoencoder.
//!
//! The crate is `no_std` + `alloc`. Everything here is pure computation:
//! band-reliability weights, the encoder/decoder forward and backward passes,
//! spectral angle losses, Adam, synthetic scene generation and ground-truth
//! evaluation. File formats and the command-line front end live in the
//! `ftir-unmix` crate.
//!
//! The `std` feature (on by default) switches the matrix kernels to the
//! runtime-dispatched SIMD backend of the `gemm` crate and enables `std`
//! support in the dependencies.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod bandweights;
pub mod cube;
pub mod error;
pub mod eval;
mod gemm;
pub mod loss;
pub mod model;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod train;

pub use bandweights::{estimate_band_weights, BandDiagnostics, BandWeights, WeightConfig};
pub use cube::{AbundanceMap, EndmemberMatrix, HyperCube, WavenumberAxis};
pub use error::{Error, Result};
pub use model::{ModelConfig, ModelParams};
pub use train::{LossKind, TrainConfig, TrainHistory};
