//! Depth-driven synthetic haze for driving datasets.
//!
//! The crate turns a clean RGB image plus a depth (or disparity) map into a
//! hazy image with the atmospheric scattering model
//! `I = J·t + A·(1 − t)`, `t = exp(−β·d)`, and wraps that per-pixel math in
//! an offline dataset builder, an online augmentation server and a
//! detection-metrics evaluator.
//!
//! Raster math is generic over the sample type ([`Sample`], implemented for
//! `f32` and `f64`); exponentials and blends are always evaluated in `f64`.
//! The aliases below name the concrete forms used by the pipeline.

pub mod codec;
pub mod depth_io;
pub mod eval;
pub mod haze;
pub mod labels;
pub mod pipeline;
pub mod raster;
pub mod sampler;
pub mod scalar;
pub mod stream;

pub use haze::HazeParams;
pub use raster::{Raster, Shape};
pub use scalar::Sample;

/// Working-form RGB image, samples in `[0, 255]`.
pub type Image = Raster<f64>;
/// Working-form RGB image with 32-bit storage.
pub type ImageF32 = Raster<f32>;
/// Storage-form RGB image, one byte per sample.
pub type Image8 = Raster<u8>;
/// Single-channel relative depth.
pub type DepthMap = Raster<f64>;
/// Single-channel relative depth with 32-bit storage.
pub type DepthMapF32 = Raster<f32>;
/// Single-channel transmission, samples in `(0, 1]`.
pub type TransmissionMap = Raster<f64>;
/// Axis-aligned pixel box in `f64`.
pub type BBox = eval::BBox<f64>;

/// Version string recorded in dataset manifests.
pub const TOOL_VERSION: &str = concat!("hazeforge ", env!("CARGO_PKG_VERSION"));
