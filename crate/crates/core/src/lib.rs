//! Discontinuity-aware video frame interpolation building blocks.
//!
//! - [`image`]: frames, masks, sequences, PNG/PPM I/O and geometric transforms.
//! - [`ftm`]: figure/text mixing overlay augmentation with exact ground truth.
//! - [`blend`]: D-map blending and the Charbonnier training losses.
//! - [`model`]: a small convolutional D-map estimator with training and checkpoints.
//! - [`metrics`]: PSNR, SSIM and D-map IoU, with dataset evaluation reports.
//! - [`synth`]: synthetic sequences with screen-element discontinuities.

pub mod autodiff;
pub mod blend;
pub mod dataset;
pub mod error;
pub mod font;
pub mod ftm;
pub mod image;
pub mod interp;
pub mod metrics;
pub mod model;
pub mod registry;
pub mod synth;

pub use error::{Error, Result};
