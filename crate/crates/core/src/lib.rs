//! Disparity-conditioned stereo view synthesis.
//!
//! Given a left image and a disparity map, the crate forward-warps the image
//! and a Fourier coordinate embedding into the right view, runs a small
//! two-stream diffusion denoiser with cross-view attention to fill the
//! occluded regions, and blends the generated and warped images with a
//! learned per-pixel fusion weight. It also ships the stereo evaluation
//! metrics (PSNR, SSIM, EPE, D1-all, bad-pixel rates) and the data pipeline
//! used to train the toy model.

pub mod diffusion;
pub mod embed;
pub mod error;
pub mod fusion;
pub mod grid;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod warp;

pub use error::{Error, Result};
pub use grid::{DisparityMap, ImagePlane, TensorF32, ValidityMask};
