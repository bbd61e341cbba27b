//! Seed derivation and per-image haze parameter sampling.
//!
//! Every random decision is keyed by a 64-bit seed derived with SHA-256 from
//! stable inputs, so results never depend on processing order or thread
//! count. The derivations are:
//!
//! * image seed: first 8 bytes (LE) of `SHA-256("hazeforge/image/v1" ‖ global_seed as LE u64 ‖ sample_id UTF-8)`
//! * epoch seed: the image seed for epoch 0, otherwise
//!   `SHA-256("hazeforge/epoch/v1" ‖ image_seed LE ‖ epoch LE)`
//! * purpose seed: `SHA-256("hazeforge/" ‖ tag ‖ "/v1" ‖ seed LE)`
//!
//! Draws from a seed use ChaCha8 seeded through `seed_from_u64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::haze::{HazeParams, MAX_INTENSITY};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("{name} interval [{lo}, {hi}] is inverted")]
    Inverted { name: &'static str, lo: f64, hi: f64 },
    #[error("beta interval lower bound must be > 0 (beta > 0), got {0}")]
    NonPositiveBeta(f64),
    #[error("airlight interval [{lo}, {hi}] must lie within [0, 255]")]
    AirlightOutOfRange { lo: f64, hi: f64 },
    #[error("{name} interval has a non-finite bound")]
    NonFinite { name: &'static str },
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    fn check(&self, name: &'static str) -> Result<(), SamplerError> {
        if !(self.lo.is_finite() && self.hi.is_finite()) {
            return Err(SamplerError::NonFinite { name });
        }
        if self.lo > self.hi {
            return Err(SamplerError::Inverted {
                name,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(())
    }
}

pub const DEFAULT_BETA_RANGE: Interval = Interval::new(1.0, 3.0);
pub const DEFAULT_AIRLIGHT_RANGE: Interval = Interval::new(150.0, 255.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub beta_range: Interval,
    pub airlight_range: Interval,
    pub global_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            beta_range: DEFAULT_BETA_RANGE,
            airlight_range: DEFAULT_AIRLIGHT_RANGE,
            global_seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn with_seed(global_seed: u64) -> Self {
        Self {
            global_seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        self.beta_range.check("beta")?;
        self.airlight_range.check("airlight")?;
        if self.beta_range.lo <= 0.0 {
            return Err(SamplerError::NonPositiveBeta(self.beta_range.lo));
        }
        let a = self.airlight_range;
        if a.lo < 0.0 || a.hi > MAX_INTENSITY {
            return Err(SamplerError::AirlightOutOfRange { lo: a.lo, hi: a.hi });
        }
        Ok(())
    }
}

fn digest_u64(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 is 32 bytes"))
}

/// Stable per-image seed from the run seed and the dataset-relative id.
pub fn derive_image_seed(global_seed: u64, sample_id: &str) -> u64 {
    debug_assert!(!sample_id.is_empty(), "sample_id must be non-empty");
    digest_u64(&[b"hazeforge/image/v1", &global_seed.to_le_bytes(), sample_id.as_bytes()])
}

/// Seed for one presentation of an image; epoch 0 reuses the image seed so
/// online epoch 0 matches the offline build.
pub fn derive_epoch_seed(image_seed: u64, epoch: u64) -> u64 {
    if epoch == 0 {
        image_seed
    } else {
        digest_u64(&[b"hazeforge/epoch/v1", &image_seed.to_le_bytes(), &epoch.to_le_bytes()])
    }
}

/// Independent sub-seed for one purpose (`"baseline-t"`, `"mix"`, ...).
pub fn derive_purpose_seed(seed: u64, tag: &str) -> u64 {
    digest_u64(&[b"hazeforge/", tag.as_bytes(), b"/v1", &seed.to_le_bytes()])
}

/// Uniform draw in `[0, 1)`.
pub fn unit_draw(seed: u64) -> f64 {
    ChaCha8Rng::seed_from_u64(seed).random::<f64>()
}

/// Draws β then A, each uniform on its closed interval.
pub fn sample_params(config: &SamplerConfig, image_seed: u64) -> HazeParams {
    let mut rng = ChaCha8Rng::seed_from_u64(image_seed);
    let beta = rng.random_range(config.beta_range.lo..=config.beta_range.hi);
    let airlight = rng.random_range(config.airlight_range.lo..=config.airlight_range.hi);
    HazeParams { beta, airlight }
}
