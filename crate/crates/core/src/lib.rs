//! Frequency-weighted autoencoder training and anomaly scoring for images.
//!
//! The crate trains a residual convolutional autoencoder on defect-free
//! images with a loss defined in the frequency domain: both the input and
//! the reconstruction are mapped through a 2-D discrete Fourier transform
//! and the per-bin complex distance is weighted by the bin's radial
//! frequency, so reconstruction errors in fine detail cost more than
//! errors in smooth regions. Test images are then ranked by their spatial
//! reconstruction error and the ranking is summarized as AUROC.
//!
//! Module map:
//! - [`spectral`]: 2-D DFT, spectrum shifting, radial filtering, frequency weights
//! - [`loss`]: spatial MSE, frequency-domain distance, the weighted loss and its gradient
//! - [`model`]: the residual autoencoder with exact hand-rolled backpropagation
//! - [`optim`]: the RAdam optimizer
//! - [`scoring`]: anomaly scores, residual maps, AUROC
//! - [`data`]: dataset loading, preprocessing, batching, synthetic defect data
//! - [`cli`]: the `train` / `eval` / `reconstruct` / `filter` / `synth` commands

pub mod checkpoint;
pub mod cli;
pub mod data;
mod error;
pub mod loss;
pub mod model;
pub mod optim;
pub mod scoring;
pub mod spectral;
pub mod types;

pub use error::{Error, Result};
