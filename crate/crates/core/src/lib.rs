//! Single-image reflection suppression, allocation-only core.
//!
//! Everything in this crate is pure computation over in-memory buffers:
//! a reverse-mode autodiff tensor graph, the synthetic reflection data
//! generator, the context-aware generator and its discriminator, the four
//! training losses, PSNR/SSIM, Adam, and a deterministic training step.
//! File formats, image decoding and the command line live in the `reflectnet`
//! companion crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod infer;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod real;
pub mod synth;
pub mod tensor;
pub mod train;

pub use autodiff::{ConvSpec, Graph, Var};
pub use error::{Error, Result};
pub use image::Image;
pub use real::Real;
pub use tensor::Tensor;
