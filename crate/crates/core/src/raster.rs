use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Sample;

/// Dimensions of a raster: width × height pixels with `channels` samples each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self { width, height, channels }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn samples(&self) -> usize {
        self.width * self.height * self.channels
    }

    /// Same width and height, ignoring channel count.
    pub fn same_plane(&self, other: &Shape) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.width, self.height, self.channels)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RasterError {
    #[error("raster dimensions must be at least 1x1x1, got {0}")]
    Empty(Shape),
    #[error("raster {shape} needs {expected} samples, got {actual}")]
    LengthMismatch {
        shape: Shape,
        expected: usize,
        actual: usize,
    },
    #[error("raster dimensions {width}x{height}x{channels} overflow")]
    Overflow {
        width: usize,
        height: usize,
        channels: usize,
    },
}

/// Interleaved, row-major grid of samples, top row first.
///
/// Images use three channels in RGB order; depth and transmission use one.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T> Raster<T> {
    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self, RasterError> {
        let shape = Shape::new(width, height, channels);
        if width == 0 || height == 0 || channels == 0 {
            return Err(RasterError::Empty(shape));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or(RasterError::Overflow { width, height, channels })?;
        if data.len() != expected {
            return Err(RasterError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Result<Self, RasterError>
    where
        T: Clone,
    {
        let len = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or(RasterError::Overflow { width, height, channels })?;
        Self::from_vec(width, height, channels, vec![value; len])
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.shape.width + x) * self.shape.channels + c
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> Option<&T> {
        if x < self.shape.width && y < self.shape.height && c < self.shape.channels {
            self.data.get(self.index(x, y, c))
        } else {
            None
        }
    }

    /// `(x, y, channel)` of a flat sample index.
    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let c = index % self.shape.channels;
        let pixel = index / self.shape.channels;
        (pixel % self.shape.width, pixel / self.shape.width, c)
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Raster<U> {
        Raster {
            shape: self.shape,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl Raster<u8> {
    /// Promotes storage-form bytes to working-form reals in `[0, 255]`.
    pub fn to_working<T: Sample>(&self) -> Raster<T> {
        self.map(|&v| T::narrow(v as f64))
    }
}

impl<T: Sample> Raster<T> {
    /// Converts between sample types, e.g. `f32` storage to `f64`.
    pub fn cast<U: Sample>(&self) -> Raster<U> {
        self.map(|&v| U::narrow(v.widen()))
    }
}
