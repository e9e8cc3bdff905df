//! Variational image denoising and deblurring by gradient descent.
//!
//! The crate is organized bottom-up:
//!
//! - [`grid`]: square lattices, forward-difference gradient and divergence,
//!   error metrics and noise synthesis.
//! - [`regularization`]: Huber and Tukey edge-stopping families, the adaptive
//!   threshold and the frozen-coefficient diffusion operator.
//! - [`blur`]: point spread functions and FFT-based periodic convolution.
//! - [`solvers`]: gradient descent with steepest, lagged and half-lagged step
//!   sizes, preconditioned conjugate gradients and lagged-diffusivity (IRLS)
//!   outer iterations.
//! - [`pipelines`]: explicit, hybrid explicit-implicit and sharpening
//!   denoisers, deblurring and split restoration of noisy blurred data.
//! - [`io`]: PGM images, plain-text kernels and CSV iteration logs.

// Validation uses `!(x > 0.0)` on purpose so that NaN is rejected as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blur;
pub mod error;
pub mod grid;
pub mod io;
pub mod phantom;
pub mod pipelines;
pub mod regularization;
pub mod solvers;

pub use error::{RestoreError, Result};
pub use grid::{ImageGrid, NoiseSpec};
