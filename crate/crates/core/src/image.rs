//! Dense float RGBA images, row-major with row 0 at the top.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RgbaImage {
    height: usize,
    width: usize,
    data: Vec<[f64; 4]>,
}

impl RgbaImage {
    pub fn new(height: usize, width: usize, fill: [f64; 4]) -> Self {
        Self {
            height,
            width,
            data: vec![fill; height * width],
        }
    }

    pub fn from_pixels(height: usize, width: usize, data: Vec<[f64; 4]>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                actual: data.len(),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[[f64; 4]] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [[f64; 4]] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> [f64; 4] {
        self.data[row * self.width + col]
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.data.iter().map(|p| p[3]).collect()
    }

    pub fn check_same_size(&self, other: &RgbaImage) -> Result<()> {
        if self.size() != other.size() {
            return Err(Error::SizeMismatch {
                left: self.size(),
                right: other.size(),
            });
        }
        Ok(())
    }
}
