//! Hyperspectral super-resolution by fusing a low-resolution hyperspectral
//! cube with a high-resolution multispectral image.
//!
//! The pipeline is split into:
//! - [`cube`]: the [`HyperCube`] type, HSC1 persistence, spectral responses
//!   and pseudo-color export;
//! - [`degradation`]: blur + decimation and spectral response, used to
//!   synthesize training pairs;
//! - [`ops`]: differentiable operators with exact backward passes;
//! - [`filters`]: high-pass detail extraction and band interleaving;
//! - [`network`]: the two-branch fusion network, its loss and backward pass;
//! - [`trainer`]: patching, Adam, checkpoints and the training loop;
//! - [`metrics`]: PSNR, SAM, ERGAS and SSIM;
//! - [`synthetic`]: seeded synthetic scenes for smoke runs.

pub mod cube;
pub mod degradation;
pub mod error;
pub mod filters;
pub mod metrics;
pub mod network;
pub mod ops;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use cube::{HyperCube, SpectralResponse};
pub use error::{Error, Result};

pub use network::{NetworkConfig, NetworkParams, Variant};
pub use tensor::{Real, Tensor};
