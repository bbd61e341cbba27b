use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point raster sample.
///
/// Rasters may store `f32` or `f64`; every transcendental and blend is
/// evaluated after widening to `f64` and narrowed once on the way out.
pub trait Sample: Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + 'static {
    fn widen(self) -> f64;
    fn narrow(value: f64) -> Self;
}

impl Sample for f32 {
    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }

    #[inline]
    fn narrow(value: f64) -> Self {
        value as f32
    }
}

impl Sample for f64 {
    #[inline]
    fn widen(self) -> f64 {
        self
    }

    #[inline]
    fn narrow(value: f64) -> Self {
        value
    }
}
