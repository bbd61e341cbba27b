//! Depth and disparity ingestion.
//!
//! Three on-disk formats are understood:
//!
//! * **PFM**: `Pf` header, ASCII width/height, a scale whose sign encodes the
//!   byte order (negative = little-endian), then 32-bit samples stored
//!   bottom row first.
//! * **PNG16**: single-channel 16-bit PNG; values are read as `v / 65535`.
//! * **RAWF32**: 16-byte header (`DPT1`, LE `u32` width, LE `u32` height,
//!   four zero bytes) followed by row-major little-endian `f32` samples.
//!
//! Raw rasters are turned into relative depth by [`disparity_to_depth`]
//! and/or [`normalize_depth`] before they reach the haze model.

use std::io::{Cursor, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageReader};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Raster, RasterError};
use crate::scalar::Sample;

pub const RAWF32_MAGIC: &[u8; 4] = b"DPT1";
pub const RAWF32_HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum DepthError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot infer depth format from {0}; expected .pfm, .png or .f32")]
    UnknownExtension(PathBuf),
    #[error("malformed {format} at byte {offset}: {message}")]
    Format {
        format: DepthFormat,
        offset: usize,
        message: String,
    },
    #[error("malformed {format}: {message}")]
    Decode { format: DepthFormat, message: String },
    #[error("non-finite depth sample at pixel ({x}, {y})")]
    NonFinite { x: usize, y: usize },
    #[error("negative depth sample {value} at pixel ({x}, {y})")]
    Negative { x: usize, y: usize, value: f64 },
    #[error("depth raster is all zeros; haze density is undefined")]
    Degenerate,
    #[error("depth raster must have one channel, got {0}")]
    Channels(usize),
    #[error("invalid normalization policy: {0}")]
    Policy(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthFormat {
    Pfm,
    Png16,
    RawF32,
}

impl DepthFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "pfm" => Some(Self::Pfm),
            "png" => Some(Self::Png16),
            "f32" => Some(Self::RawF32),
            _ => None,
        }
    }

    /// Extensions probed when pairing images with depth files, in priority order.
    pub const EXTENSIONS: [&'static str; 3] = ["pfm", "f32", "png"];
}

impl std::fmt::Display for DepthFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Pfm => "PFM",
            Self::Png16 => "PNG16",
            Self::RawF32 => "RAWF32",
        })
    }
}

impl std::str::FromStr for DepthFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pfm" => Ok(Self::Pfm),
            "png16" | "png" => Ok(Self::Png16),
            "rawf32" | "f32" => Ok(Self::RawF32),
            other => Err(format!("unknown depth format '{other}' (pfm, png16, rawf32)")),
        }
    }
}

/// Whether file samples are depth or inverse depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthInterpretation {
    #[default]
    Depth,
    Disparity,
}

impl std::str::FromStr for DepthInterpretation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "depth" => Ok(Self::Depth),
            "disparity" => Ok(Self::Disparity),
            other => Err(format!("unknown depth interpretation '{other}' (depth, disparity)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthSource {
    pub path: PathBuf,
    pub format: DepthFormat,
    pub interpretation: DepthInterpretation,
}

impl DepthSource {
    /// Infers the format from the extension; the interpretation defaults to depth.
    pub fn from_path(path: impl Into<PathBuf>) -> Result<Self, DepthError> {
        let path = path.into();
        let format = DepthFormat::from_path(&path).ok_or_else(|| DepthError::UnknownExtension(path.clone()))?;
        Ok(Self {
            path,
            format,
            interpretation: DepthInterpretation::Depth,
        })
    }

    pub fn with_format(mut self, format: DepthFormat) -> Self {
        self.format = format;
        self
    }

    pub fn with_interpretation(mut self, interpretation: DepthInterpretation) -> Self {
        self.interpretation = interpretation;
        self
    }
}

/// How raw depth becomes relative depth in `[0, target_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationPolicy {
    /// Nearest-rank percentile used as the clipping point, in `(50, 100]`.
    pub clip_percentile: f64,
    pub target_max: f64,
    /// Lower bound applied to disparity before taking its reciprocal.
    pub disparity_epsilon: f64,
}

impl Default for NormalizationPolicy {
    fn default() -> Self {
        Self {
            clip_percentile: 99.9,
            target_max: 1.0,
            disparity_epsilon: 1e-6,
        }
    }
}

impl NormalizationPolicy {
    pub fn validate(&self) -> Result<(), DepthError> {
        if !(self.clip_percentile > 50.0 && self.clip_percentile <= 100.0) {
            return Err(DepthError::Policy(format!(
                "clip_percentile must lie in (50, 100], got {}",
                self.clip_percentile
            )));
        }
        if !(self.target_max > 0.0 && self.target_max.is_finite()) {
            return Err(DepthError::Policy(format!("target_max must be > 0, got {}", self.target_max)));
        }
        if !(self.disparity_epsilon > 0.0 && self.disparity_epsilon.is_finite()) {
            return Err(DepthError::Policy(format!(
                "disparity_epsilon must be > 0, got {}",
                self.disparity_epsilon
            )));
        }
        Ok(())
    }
}

pub fn read_depth<T: Sample>(source: &DepthSource) -> Result<Raster<T>, DepthError> {
    let bytes = std::fs::read(&source.path).map_err(|e| DepthError::Io {
        path: source.path.clone(),
        source: e,
    })?;
    match source.format {
        DepthFormat::Pfm => parse_pfm(&bytes),
        DepthFormat::Png16 => parse_png16(&bytes),
        DepthFormat::RawF32 => parse_rawf32(&bytes),
    }
}

/// Reads, converts disparity if needed, and normalizes.
pub fn load_depth<T: Sample>(source: &DepthSource, policy: &NormalizationPolicy) -> Result<Raster<T>, DepthError> {
    let raw = read_depth::<T>(source)?;
    match source.interpretation {
        DepthInterpretation::Depth => normalize_depth(&raw, policy),
        DepthInterpretation::Disparity => disparity_to_depth(&raw, policy),
    }
}

fn format_err(format: DepthFormat, offset: usize, message: impl Into<String>) -> DepthError {
    DepthError::Format {
        format,
        offset,
        message: message.into(),
    }
}

fn checked_len(format: DepthFormat, offset: usize, width: usize, height: usize) -> Result<usize, DepthError> {
    width
        .checked_mul(height)
        .filter(|&n| n > 0)
        .and_then(|n| n.checked_mul(4).map(|_| n))
        .ok_or_else(|| format_err(format, offset, format!("invalid dimensions {width}x{height}")))
}

fn finite_or_err<T: Sample>(values: Vec<T>, width: usize) -> Result<Vec<T>, DepthError> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(DepthError::NonFinite {
            x: i % width,
            y: i / width,
        });
    }
    Ok(values)
}

/// Splits the next whitespace-delimited ASCII token starting at `pos`.
fn next_token(bytes: &[u8], mut pos: usize) -> Option<(&str, usize, usize)> {
    while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
        pos += 1;
    }
    let start = pos;
    while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
        pos += 1;
    }
    if start == pos {
        return None;
    }
    std::str::from_utf8(&bytes[start..pos]).ok().map(|s| (s, start, pos))
}

pub fn parse_pfm<T: Sample>(bytes: &[u8]) -> Result<Raster<T>, DepthError> {
    const F: DepthFormat = DepthFormat::Pfm;
    let (magic, _, pos) = next_token(bytes, 0).ok_or_else(|| format_err(F, 0, "missing header"))?;
    match magic {
        "Pf" => {}
        "PF" => return Err(format_err(F, 0, "colour PFM (PF) is not a depth map; expected Pf")),
        _ => return Err(format_err(F, 0, format!("bad magic {magic:?}"))),
    }
    let mut header = [0.0f64; 3];
    let mut pos = pos;
    for (i, slot) in header.iter_mut().enumerate() {
        let (tok, start, end) = next_token(bytes, pos).ok_or_else(|| format_err(F, pos, "truncated header"))?;
        *slot = if i < 2 {
            tok.parse::<usize>()
                .map_err(|_| format_err(F, start, format!("bad dimension {tok:?}")))? as f64
        } else {
            tok.parse::<f64>()
                .map_err(|_| format_err(F, start, format!("bad scale {tok:?}")))?
        };
        pos = end;
    }
    // exactly one whitespace byte separates the scale from the samples
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(format_err(F, pos, "truncated header"));
    }
    pos += 1;
    let (width, height, scale) = (header[0] as usize, header[1] as usize, header[2]);
    if scale == 0.0 || !scale.is_finite() {
        return Err(format_err(F, pos, format!("bad scale {scale}")));
    }
    let little = scale < 0.0;
    let n = checked_len(F, pos, width, height)?;
    let body = &bytes[pos..];
    if body.len() < n * 4 {
        return Err(format_err(
            F,
            bytes.len(),
            format!("expected {} sample bytes, found {}", n * 4, body.len()),
        ));
    }
    let mut data = vec![T::zero(); n];
    for (i, chunk) in body[..n * 4].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (row, col) = (i / width, i % width);
        // stored bottom row first
        data[(height - 1 - row) * width + col] = T::narrow(v as f64);
    }
    Ok(Raster::from_vec(width, height, 1, finite_or_err(data, width)?)?)
}

/// Byte order for [`write_pfm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

pub fn write_pfm<T: Sample>(raster: &Raster<T>, endian: Endian, mut out: impl Write) -> Result<(), DepthError> {
    if raster.channels() != 1 {
        return Err(DepthError::Channels(raster.channels()));
    }
    let scale = match endian {
        Endian::Little => "-1.0",
        Endian::Big => "1.0",
    };
    let io = |e| DepthError::Io {
        path: PathBuf::from("<pfm>"),
        source: e,
    };
    write!(out, "Pf\n{} {}\n{}\n", raster.width(), raster.height(), scale).map_err(io)?;
    let mut buf = Vec::with_capacity(raster.data().len() * 4);
    for row in raster.data().chunks_exact(raster.width()).rev() {
        for &v in row {
            let v = v.widen() as f32;
            buf.extend_from_slice(&match endian {
                Endian::Little => v.to_le_bytes(),
                Endian::Big => v.to_be_bytes(),
            });
        }
    }
    out.write_all(&buf).map_err(io)
}

pub fn parse_rawf32<T: Sample>(bytes: &[u8]) -> Result<Raster<T>, DepthError> {
    const F: DepthFormat = DepthFormat::RawF32;
    if bytes.len() < RAWF32_HEADER_LEN {
        return Err(format_err(F, bytes.len(), "truncated header"));
    }
    if &bytes[..4] != RAWF32_MAGIC {
        return Err(format_err(F, 0, "bad magic, expected DPT1"));
    }
    let word = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize;
    let (width, height) = (word(4), word(8));
    if word(12) != 0 {
        return Err(format_err(F, 12, "reserved header bytes must be zero"));
    }
    let n = checked_len(F, 4, width, height)?;
    let body = &bytes[RAWF32_HEADER_LEN..];
    if body.len() < n * 4 {
        return Err(format_err(
            F,
            bytes.len(),
            format!("expected {} sample bytes, found {}", n * 4, body.len()),
        ));
    }
    let data = body[..n * 4]
        .chunks_exact(4)
        .map(|c| T::narrow(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    Ok(Raster::from_vec(width, height, 1, finite_or_err(data, width)?)?)
}

pub fn write_rawf32<T: Sample>(raster: &Raster<T>, mut out: impl Write) -> Result<(), DepthError> {
    if raster.channels() != 1 {
        return Err(DepthError::Channels(raster.channels()));
    }
    let mut buf = Vec::with_capacity(RAWF32_HEADER_LEN + raster.data().len() * 4);
    buf.extend_from_slice(RAWF32_MAGIC);
    buf.extend_from_slice(&(raster.width() as u32).to_le_bytes());
    buf.extend_from_slice(&(raster.height() as u32).to_le_bytes());
    buf.extend_from_slice(&[0u8; 4]);
    for &v in raster.data() {
        buf.extend_from_slice(&(v.widen() as f32).to_le_bytes());
    }
    out.write_all(&buf).map_err(|e| DepthError::Io {
        path: PathBuf::from("<rawf32>"),
        source: e,
    })
}

pub fn parse_png16<T: Sample>(bytes: &[u8]) -> Result<Raster<T>, DepthError> {
    let decode_err = |message: String| DepthError::Decode {
        format: DepthFormat::Png16,
        message,
    };
    let img = ImageReader::with_format(Cursor::new(bytes), image::ImageFormat::Png)
        .decode()
        .map_err(|e| decode_err(e.to_string()))?;
    match img {
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            let data = buf.into_raw().into_iter().map(|v| T::narrow(v as f64 / 65535.0)).collect();
            Ok(Raster::from_vec(w as usize, h as usize, 1, data)?)
        }
        other => Err(decode_err(format!(
            "expected single-channel 16-bit PNG, got {:?}",
            other.color()
        ))),
    }
}

/// Encodes fixed-point depth as a 16-bit grayscale PNG.
pub fn write_png16(width: u32, height: u32, samples: &[u16], out: impl Write) -> Result<(), DepthError> {
    use image::codecs::png::PngEncoder;
    use image::{ExtendedColorType, ImageEncoder};
    let bytes: Vec<u8> = samples.iter().flat_map(|v| v.to_be_bytes()).collect();
    PngEncoder::new(out)
        .write_image(&bytes, width, height, ExtendedColorType::L16)
        .map_err(|e| DepthError::Decode {
            format: DepthFormat::Png16,
            message: e.to_string(),
        })
}

fn check_nonnegative<T: Sample>(raster: &Raster<T>) -> Result<(), DepthError> {
    if raster.channels() != 1 {
        return Err(DepthError::Channels(raster.channels()));
    }
    for (i, &v) in raster.data().iter().enumerate() {
        let v = v.widen();
        let (x, y, _) = raster.coords(i);
        if !v.is_finite() {
            return Err(DepthError::NonFinite { x, y });
        }
        if v < 0.0 {
            return Err(DepthError::Negative { x, y, value: v });
        }
    }
    Ok(())
}

/// Nearest-rank percentile: the value at 1-based rank `ceil(p/100 · n)` of
/// the ascending sort.
pub fn percentile_nearest_rank(values: &[f64], percentile: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty slice");
    let n = values.len();
    let rank = ((percentile * n as f64) / 100.0).ceil().clamp(1.0, n as f64) as usize;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[rank - 1]
}

/// Clamps to the clip percentile and rescales to `[0, target_max]`.
pub fn normalize_depth<T: Sample>(depth: &Raster<T>, policy: &NormalizationPolicy) -> Result<Raster<T>, DepthError> {
    policy.validate()?;
    check_nonnegative(depth)?;
    let wide: Vec<f64> = depth.data().iter().map(|v| v.widen()).collect();
    let max = wide.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Err(DepthError::Degenerate);
    }
    let mut clip = percentile_nearest_rank(&wide, policy.clip_percentile);
    if clip == 0.0 {
        // mostly-zero raster: fall back to the maximum so the scale stays finite
        clip = max;
    }
    let target = policy.target_max;
    Ok(depth.map(|&v| T::narrow(v.widen().min(clip) / clip * target)))
}

/// `d = 1 / max(disparity, ε)`, then [`normalize_depth`].
pub fn disparity_to_depth<T: Sample>(raw: &Raster<T>, policy: &NormalizationPolicy) -> Result<Raster<T>, DepthError> {
    policy.validate()?;
    check_nonnegative(raw)?;
    let eps = policy.disparity_epsilon;
    let depth = raw.map(|&v| T::narrow(1.0 / v.widen().max(eps)));
    normalize_depth(&depth, policy)
}
