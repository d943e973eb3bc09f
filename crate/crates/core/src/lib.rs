//! Gaussianizing wrappers for multiterminal source codes.
//!
//! A code designed for jointly Gaussian sources is wrapped so that each
//! encoder first mixes length-`b` blocks of its input with an orthonormal
//! real-DFT matrix. By the central limit theorem the mixed coordinates look
//! jointly Gaussian with the same covariance, so the wrapped code keeps the
//! distortion it had on Gaussian input.
//!
//! Modules:
//! - [`mixing`]: the mixing matrix, interleaving and index packing.
//! - [`sources`]: i.i.d. vector sources with a prescribed covariance.
//! - [`codecs`]: the code interface, Lloyd-Max and LMMSE baselines, distortion estimation.
//! - [`gaussianizer`]: the wrapped code and its convergence diagnostics.
//! - [`rectangularizer`]: rectangle approximations of encoder cells with an erasure symbol.
//! - [`diagnostics`]: projections, KS distance and Lindeberg sums.
//! - [`config`] and [`experiment`]: the experiment runner behind the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codecs;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod gaussianizer;
pub mod mixing;
pub mod montecarlo;
pub mod rectangularizer;
pub mod sources;

pub use error::{Error, Result};
