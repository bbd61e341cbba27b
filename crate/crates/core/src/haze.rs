//! Per-pixel atmospheric scattering model.
//!
//! Transmission decays exponentially with depth, `t = exp(−β·d)`, and a hazy
//! pixel is the convex blend `I = J·t + A·(1 − t)` of the clean radiance `J`
//! and a scalar airlight `A` shared by all three channels. Images are in
//! working form (reals in `[0, 255]`) until [`quantize`] turns them back
//! into bytes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Raster, Shape};
use crate::scalar::Sample;

/// Smallest transmission accepted by [`invert_haze`].
pub const T_FLOOR: f64 = 0.05;

/// Interval the depth-free baseline draws its global transmission from.
pub const BASELINE_T_RANGE: (f64, f64) = (0.3, 0.8);

pub const MAX_INTENSITY: f64 = 255.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HazeError {
    #[error("scattering coefficient must be > 0 (beta > 0), got {0}")]
    NonPositiveBeta(f64),
    #[error("airlight must lie in [0, 255], got {0}")]
    AirlightOutOfRange(f64),
    #[error("non-finite sample at pixel ({x}, {y}) channel {c}")]
    NonFinite { x: usize, y: usize, c: usize },
    #[error("negative depth {value} at pixel ({x}, {y})")]
    NegativeDepth { x: usize, y: usize, value: f64 },
    #[error("shape mismatch: image {image} vs map {map}")]
    ShapeMismatch { image: Shape, map: Shape },
    #[error("expected {expected} channel(s), got raster {shape}")]
    Channels { expected: usize, shape: Shape },
    #[error("transmission {value} at pixel ({x}, {y}) outside [0, 1]")]
    TransmissionOutOfRange { x: usize, y: usize, value: f64 },
    #[error("transmission {value} at pixel ({x}, {y}) below floor {floor}")]
    TransmissionBelowFloor { x: usize, y: usize, value: f64, floor: f64 },
}

/// Scattering coefficient and airlight for one synthesis event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HazeParams {
    pub beta: f64,
    pub airlight: f64,
}

impl HazeParams {
    pub fn new(beta: f64, airlight: f64) -> Result<Self, HazeError> {
        let p = Self { beta, airlight };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), HazeError> {
        // written so NaN fails both checks
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(HazeError::NonPositiveBeta(self.beta));
        }
        validate_airlight(self.airlight)
    }
}

fn validate_airlight(airlight: f64) -> Result<(), HazeError> {
    if (0.0..=MAX_INTENSITY).contains(&airlight) {
        Ok(())
    } else {
        Err(HazeError::AirlightOutOfRange(airlight))
    }
}

fn expect_channels<T>(r: &Raster<T>, expected: usize) -> Result<(), HazeError> {
    if r.channels() == expected {
        Ok(())
    } else {
        Err(HazeError::Channels { expected, shape: r.shape() })
    }
}

/// `t = exp(−β·d)` per pixel.
///
/// Results are floored at the smallest positive normal of `T` so that very
/// large depths still yield a strictly positive transmission.
pub fn depth_to_transmission<T: Sample>(depth: &Raster<T>, beta: f64) -> Result<Raster<T>, HazeError> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(HazeError::NonPositiveBeta(beta));
    }
    expect_channels(depth, 1)?;
    let floor = T::min_positive_value();
    let mut out = Vec::with_capacity(depth.data().len());
    for (i, &d) in depth.data().iter().enumerate() {
        let d = d.widen();
        if !d.is_finite() {
            let (x, y, c) = depth.coords(i);
            return Err(HazeError::NonFinite { x, y, c });
        }
        if d < 0.0 {
            let (x, y, _) = depth.coords(i);
            return Err(HazeError::NegativeDepth { x, y, value: d });
        }
        out.push(T::narrow((-beta * d).exp()).max(floor));
    }
    Ok(Raster::from_vec(depth.width(), depth.height(), 1, out).expect("shape preserved"))
}

/// Blends one sample toward the airlight.
///
/// Evaluated as `A + (J − A)·t` and clamped to the segment between `J` and
/// `A`, which keeps the result monotone in `t` under rounding; `t = 1`
/// returns `J` untouched.
#[inline]
pub fn blend(j: f64, t: f64, airlight: f64) -> f64 {
    if t == 1.0 {
        return j;
    }
    let v = airlight + (j - airlight) * t;
    v.clamp(j.min(airlight), j.max(airlight))
}

/// Applies `I = J·t + A·(1 − t)` with a per-pixel transmission map.
pub fn compose_haze<T: Sample>(
    clean: &Raster<T>,
    transmission: &Raster<T>,
    params: &HazeParams,
) -> Result<Raster<T>, HazeError> {
    validate_airlight(params.airlight)?;
    expect_channels(transmission, 1)?;
    if !clean.shape().same_plane(&transmission.shape()) {
        return Err(HazeError::ShapeMismatch {
            image: clean.shape(),
            map: transmission.shape(),
        });
    }
    let channels = clean.channels();
    let a = params.airlight;
    let mut out = Vec::with_capacity(clean.data().len());
    for (p, (px, &t)) in clean.data().chunks_exact(channels).zip(transmission.data()).enumerate() {
        let t = t.widen();
        if !(0.0..=1.0).contains(&t) {
            let (x, y, _) = transmission.coords(p);
            return Err(HazeError::TransmissionOutOfRange { x, y, value: t });
        }
        out.extend(px.iter().map(|&j| T::narrow(blend(j.widen(), t, a))));
    }
    Ok(Raster::from_vec(clean.width(), clean.height(), channels, out).expect("shape preserved"))
}

/// Blends every pixel with the same transmission `t`.
pub fn compose_uniform<T: Sample>(clean: &Raster<T>, t: f64, params: &HazeParams) -> Result<Raster<T>, HazeError> {
    validate_airlight(params.airlight)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(HazeError::TransmissionOutOfRange { x: 0, y: 0, value: t });
    }
    Ok(clean.map(|&j| T::narrow(blend(j.widen(), t, params.airlight))))
}

/// Clamps to `[0, 255]` and rounds half away from zero.
pub fn quantize<T: Sample>(image: &Raster<T>) -> Result<Raster<u8>, HazeError> {
    let mut out = Vec::with_capacity(image.data().len());
    for (i, &v) in image.data().iter().enumerate() {
        let v = v.widen();
        if !v.is_finite() {
            let (x, y, c) = image.coords(i);
            return Err(HazeError::NonFinite { x, y, c });
        }
        out.push(quantize_sample(v));
    }
    Ok(Raster::from_vec(image.width(), image.height(), image.channels(), out).expect("shape preserved"))
}

#[inline]
pub fn quantize_sample(v: f64) -> u8 {
    // f64::round rounds half away from zero
    v.clamp(0.0, MAX_INTENSITY).round() as u8
}

/// Output of [`random_transmission_baseline`].
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineHaze<T> {
    pub image: Raster<T>,
    /// The global transmission that was drawn.
    pub transmission: f64,
}

/// Draws the baseline's global transmission from [`BASELINE_T_RANGE`].
pub fn draw_baseline_transmission(seed: u64) -> f64 {
    let (lo, hi) = BASELINE_T_RANGE;
    ChaCha8Rng::seed_from_u64(seed).random_range(lo..=hi)
}

/// Depth-free comparator: one uniformly drawn transmission for the whole image.
pub fn random_transmission_baseline<T: Sample>(
    clean: &Raster<T>,
    params: &HazeParams,
    seed: u64,
) -> Result<BaselineHaze<T>, HazeError> {
    let t = draw_baseline_transmission(seed);
    Ok(BaselineHaze {
        image: compose_uniform(clean, t, params)?,
        transmission: t,
    })
}

/// Recovers `J = (I − A)/t + A`. Test oracle only; rejects `t < T_FLOOR`.
pub fn invert_haze<T: Sample>(
    hazy: &Raster<T>,
    transmission: &Raster<T>,
    params: &HazeParams,
) -> Result<Raster<T>, HazeError> {
    validate_airlight(params.airlight)?;
    expect_channels(transmission, 1)?;
    if !hazy.shape().same_plane(&transmission.shape()) {
        return Err(HazeError::ShapeMismatch {
            image: hazy.shape(),
            map: transmission.shape(),
        });
    }
    let channels = hazy.channels();
    let a = params.airlight;
    let mut out = Vec::with_capacity(hazy.data().len());
    for (p, (px, &t)) in hazy.data().chunks_exact(channels).zip(transmission.data()).enumerate() {
        let t = t.widen();
        if !(t >= T_FLOOR) {
            let (x, y, _) = transmission.coords(p);
            return Err(HazeError::TransmissionBelowFloor { x, y, value: t, floor: T_FLOOR });
        }
        out.extend(px.iter().map(|&i| {
            let i = i.widen();
            if t == 1.0 {
                T::narrow(i)
            } else {
                T::narrow((i - a) / t + a)
            }
        }));
    }
    Ok(Raster::from_vec(hazy.width(), hazy.height(), channels, out).expect("shape preserved"))
}
