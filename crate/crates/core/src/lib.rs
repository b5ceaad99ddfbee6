//! A fully-convolutional residual denoiser for grayscale images.
//!
//! Every layer of the network emits one linear "noise component" channel
//! next to its ReLU feature maps. The components of all layers are summed
//! onto the noisy input to form the estimate of the clean image, which makes
//! the network's gradual denoising directly observable (see [`diagnose`]).
//!
//! Modules, bottom-up:
//!
//! * [`tensor`]: dense `f32` arrays, 3×3 convolution and its adjoints,
//!   ReLU, symmetric padding and a raw dump format.
//! * [`rng`]: the counter-based generator used for every random draw.
//! * [`model`]: the network, its forward/backward passes and the `DNET`
//!   weight format.
//! * [`optim`]: ADAM and the training / fine-tuning loops.
//! * [`data`]: image loading, noise synthesis, patch sampling, splits.
//! * [`eval`]: PSNR and the comparison analytics with CSV/SVG reports.
//! * [`diagnose`]: partial sums, per-layer error curves, dominant-layer maps.

pub mod data;
pub mod diagnose;
mod error;
pub mod eval;
pub mod model;
pub mod optim;
pub mod rng;
mod svg;
pub mod tensor;

pub use error::{Error, Result};
