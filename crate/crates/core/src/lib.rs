//! Spatially-varying motion blur: degradation model, synthetic dataset
//! generation, non-blind deconvolution and sharpness metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm;
pub mod blur;
pub mod blurmap;
pub mod error;
pub mod filter;
pub mod image;
pub mod io;
pub mod kernel;
pub mod losses;
pub mod metrics;
pub mod prior;
pub mod rng;
pub mod sbdd;
pub mod scene;
pub mod shake;

pub use crate::blur::{degrade, BlurOperator, SaturationParams};
pub use crate::error::{Error, FormatError, Location, Result, Validate, Violation};
pub use crate::image::{Encoding, Image};
pub use crate::kernel::{
    kernel_norm_map, synth_pixel_kernel, Kernel, KernelBasis, MixingField, PixelKernels, SegmentMap,
};
