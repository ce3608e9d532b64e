use serde::{Deserialize, Serialize};

use crate::geom::Vec3;

/// Row-major 2D grid of per-pixel values. Pixel `(col, row)` lives at `row * width + col`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Raster<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }
}

impl<T> Raster<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "raster payload size");
        Self { width, height, data }
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> &T {
        &self.data[row * self.width + col]
    }

    #[inline]
    pub fn get_mut(&mut self, col: usize, row: usize) -> &mut T {
        let w = self.width;
        &mut self.data[row * w + col]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Camera-frame z per pixel in mm; `0.0` marks an invalid pixel.
pub type DepthMap = Raster<f64>;
/// Unit surface normal per pixel; the zero vector marks an invalid pixel.
pub type NormalMap = Raster<Vec3>;
/// Instance id per pixel; `0` is background (belt or miss).
pub type InstanceMask = Raster<u32>;

pub fn depth_valid(d: f64) -> bool {
    d > 0.0 && d.is_finite()
}

/// Per-pixel seal score with a validity mask (invalid pixels hold 0).
#[derive(Clone, Debug, PartialEq)]
pub struct SealMap {
    pub scores: Raster<f64>,
    pub valid: Raster<bool>,
}

impl SealMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { scores: Raster::filled(width, height, 0.0), valid: Raster::filled(width, height, false) }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.scores.dims()
    }
}
