//! RGB image decoding and deterministic PNG encoding.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder, ImageReader};
use thiserror::Error;

use crate::raster::{Raster, RasterError};

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("decoding image: {0}")]
    Decode(#[from] image::ImageError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Decodes any supported image (PNG, JPEG) to 8-bit RGB, dropping alpha.
pub fn decode_rgb8(bytes: &[u8]) -> Result<Raster<u8>, CodecError> {
    let img = ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|source| CodecError::Io {
            path: PathBuf::from("<memory>"),
            source,
        })?
        .decode()?
        .into_rgb8();
    let (w, h) = img.dimensions();
    Ok(Raster::from_vec(w as usize, h as usize, 3, img.into_raw())?)
}

pub fn load_rgb8(path: &Path) -> Result<Raster<u8>, CodecError> {
    let bytes = std::fs::read(path).map_err(|source| CodecError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_rgb8(&bytes)
}

/// Encodes an RGB raster as PNG with fixed compression and filter settings,
/// so equal rasters always produce equal bytes.
pub fn encode_png(image: &Raster<u8>) -> Result<Vec<u8>, CodecError> {
    assert_eq!(image.channels(), 3, "encode_png expects an RGB raster");
    let mut out = Vec::new();
    PngEncoder::new_with_quality(&mut out, CompressionType::Fast, FilterType::Adaptive).write_image(
        image.data(),
        image.width() as u32,
        image.height() as u32,
        ExtendedColorType::Rgb8,
    )?;
    Ok(out)
}
