//! Sinogram inpainting numerics.
//!
//! The crate bundles everything needed to train and evaluate a small
//! frequency-domain-convolution inpainting network on synthetic sparse-view
//! CT data:
//!
//! * [`tensor`]: dense tensors with reverse-mode autodiff and gradcheck
//! * [`phantom`]: Shepp-Logan and random-shape attenuation images
//! * [`radon`]: parallel-beam projection and filtered backprojection
//! * [`spectral`]: per-axis frequency convolution and the two-branch block
//! * [`masking`]: random angle masks
//! * [`losses`]: pixel, total-absorption and frequency consistency losses
//! * [`model`]: encoder / frequency block / decoder network, Adam, training
//! * [`baselines`]: linear interpolation and TV inpainting
//! * [`metrics`]: SSIM and PSNR, restricted to masked rows
//! * [`io`] and [`cli`]: file formats and the command-line surface

pub mod baselines;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod io;
pub mod losses;
pub mod masking;
pub mod metrics;
pub mod model;
pub mod par;
pub mod phantom;
pub mod radon;
pub mod rng;
pub mod spectral;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
