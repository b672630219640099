//! Layered image compression built on semantic segmentation.
//!
//! An image `x` is coded as three layers: its segmentation map `s` (base
//! layer), a learned α×-downsampled compact image `c`, and the residual
//! `r = x − x′` against the coarse reconstruction
//! `x′ = upsample(c) + FineNet(s, upsample(c))`. Any prefix of the layers
//! decodes to an image.
//!
//! * [`networks`] – CompNet, FineNet, two-scale discriminators, segmentation
//!   and feature-extractor adapters
//! * [`losses`] – reconstruction, perceptual and adversarial objectives
//! * [`training`] – dataset ingestion, schedules and the joint training loop
//! * [`codec`] – encode/decode and the layered container format
//! * [`evaluation`] – PSNR, MS-SSIM, bpp, rate sweeps and ablation tables

pub mod codec;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod losses;
pub mod networks;
pub mod nn;
pub mod resample;
pub mod training;
pub mod weights;

pub use error::{Error, Result};
pub use image::{ImagePlane, SegmentationMap};
