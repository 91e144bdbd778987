//! 2-D maps shared by every module: masks, predictions, labels and distance fields.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SodError};

/// Row-major 2-D grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn filled(height: usize, width: usize, v: T) -> Self {
        Grid { height, width, data: vec![v; height * width] }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(SodError::InvalidMask(format!("empty grid {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(SodError::InvalidMask(format!("{} values for a {height}x{width} grid", data.len())));
        }
        Ok(Grid { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Grid { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid { height: self.height, width: self.width, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn flip_horizontal(&self) -> Self {
        Grid::from_fn(self.height, self.width, |y, x| self.get(y, self.width - 1 - x))
    }

    /// Rotate 90 degrees clockwise.
    pub fn rotate90(&self) -> Self {
        let (h, w) = (self.height, self.width);
        Grid::from_fn(w, h, |y, x| self.get(h - 1 - x, y))
    }

    /// Copy the rectangle with top-left `(y0, x0)` and size `h x w`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Self {
        Grid::from_fn(h, w, |y, x| self.get(y0 + y, x0 + x))
    }

    pub fn ensure_same_dims<U>(&self, other: &Grid<U>, op: &'static str) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(SodError::ShapeMismatch { op, a: self.dims(), b: (other.height, other.width) });
        }
        Ok(())
    }
}

/// Real-valued map in `[0, 1]`: predictions, detail and body maps.
pub type GrayMask = Grid<f64>;

impl Grid<f64> {
    pub fn zeros(height: usize, width: usize) -> Self {
        Grid::filled(height, width, 0.0)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Quantize to 8-bit with `round(255 v)`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    pub fn from_u8(height: usize, width: usize, data: &[u8]) -> Result<Self> {
        Grid::from_vec(height, width, data.iter().map(|&v| v as f64 / 255.0).collect())
    }
}

/// Binary ground-truth mask. Pixels are `true` for salient foreground.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth(Grid<bool>);

impl GroundTruth {
    pub fn new(grid: Grid<bool>) -> Self {
        GroundTruth(grid)
    }

    /// Build from 0/1 values; any other value is rejected.
    pub fn from_binary(height: usize, width: usize, values: &[u8]) -> Result<Self> {
        if let Some(v) = values.iter().find(|&&v| v > 1) {
            return Err(SodError::InvalidMask(format!("pixel value {v} is not 0 or 1")));
        }
        Ok(GroundTruth(Grid::from_vec(height, width, values.iter().map(|&v| v == 1).collect())?))
    }

    /// Binarize an 8-bit grayscale mask: foreground iff value >= `threshold`.
    pub fn from_gray(height: usize, width: usize, values: &[u8], threshold: u8) -> Result<Self> {
        Ok(GroundTruth(Grid::from_vec(height, width, values.iter().map(|&v| v >= threshold).collect())?))
    }

    pub fn empty(height: usize, width: usize) -> Self {
        GroundTruth(Grid::filled(height, width, false))
    }

    pub fn grid(&self) -> &Grid<bool> {
        &self.0
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.0.get(y, x)
    }

    pub fn count(&self) -> usize {
        self.0.data().iter().filter(|&&v| v).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        !self.0.data().iter().any(|&v| v)
    }

    pub fn to_gray(&self) -> GrayMask {
        self.0.map(|v| if v { 1.0 } else { 0.0 })
    }

    pub fn flip_horizontal(&self) -> Self {
        GroundTruth(self.0.flip_horizontal())
    }

    pub fn rotate90(&self) -> Self {
        GroundTruth(self.0.rotate90())
    }
}

/// Edge-proximal supervision derived from a [`GroundTruth`]; values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetailLabel(pub(crate) GrayMask);

impl DetailLabel {
    pub fn map(&self) -> &GrayMask {
        &self.0
    }

    pub fn into_map(self) -> GrayMask {
        self.0
    }
}

/// Per-pixel Euclidean distance (in pixels) to the nearest seed pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceField(pub(crate) Grid<f64>);

impl DistanceField {
    pub fn grid(&self) -> &Grid<f64> {
        &self.0
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.0.get(y, x)
    }
}
