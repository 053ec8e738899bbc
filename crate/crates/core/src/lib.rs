//! Allocation-only core of a desk-scale neural video codec with
//! parameter-efficient instance adaptation.
//!
//! The crate is `no_std` (with `alloc`). Everything that touches files,
//! processes or the terminal lives in the companion `pevc` crate.
//!
//! Layout:
//! - [`tensor`], [`graph`], [`ops`]: a small reverse-mode autodiff engine
//!   with exactly the operators the codec needs.
//! - [`adapter`]: factorized convolution-kernel adapters (repeat and
//!   extended variants).
//! - [`entropy`]: range coder, latent likelihoods, spike-and-slab weight
//!   prior and the weight-delta payload.
//! - [`codec`]: the three-branch (intra / motion / residual) codec with
//!   hyperpriors, pretraining and the sequence bitstream.
//! - [`adapt`]: per-instance fine-tuning.
//! - [`metrics`]: PSNR, MS-SSIM, BD-rate.
//! - [`gradcheck`]: finite-difference gradient checks.
#![no_std]
#![allow(clippy::too_many_arguments, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod adapt;
pub mod adapter;
pub mod codec;
pub mod container;
pub mod entropy;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod ops;
pub mod real;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use real::Real;
pub use tensor::{Shape, Tensor};
