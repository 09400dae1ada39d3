//! Detector-plane rasters.
//!
//! Pixel `(col, row)` lives at index `col + width * row`. Columns run along
//! the detector's horizontal axis, rows downwards.

use serde::{Deserialize, Serialize};

use crate::error::{DrrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageKind {
    LineIntegral,
    IntensityRatio,
    DepthMm,
    Generic,
}

impl ImageKind {
    pub fn name(self) -> &'static str {
        match self {
            ImageKind::LineIntegral => "line_integral",
            ImageKind::IntensityRatio => "intensity_ratio",
            ImageKind::DepthMm => "depth_mm",
            ImageKind::Generic => "generic",
        }
    }
}

/// Float raster with isotropic pixel pitch (mm/pixel).
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    pub width: usize,
    pub height: usize,
    pub pitch: f64,
    pub values: Vec<f64>,
    pub kind: ImageKind,
}

fn check_raster(width: usize, height: usize, pitch: f64, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(DrrError::InvariantViolation(format!(
            "raster dimensions must be >= 1, got {width}x{height}"
        )));
    }
    if !(pitch > 0.0 && pitch.is_finite()) {
        return Err(DrrError::InvariantViolation(format!("pixel pitch must be positive, got {pitch}")));
    }
    if len != width * height {
        return Err(DrrError::SizeMismatch {
            expected: width * height,
            actual: len,
        });
    }
    Ok(())
}

impl Image2D {
    pub fn new(width: usize, height: usize, pitch: f64, values: Vec<f64>, kind: ImageKind) -> Result<Self> {
        check_raster(width, height, pitch, values.len())?;
        let img = Image2D {
            width,
            height,
            pitch,
            values,
            kind,
        };
        img.check_values()?;
        Ok(img)
    }

    pub fn zeros(width: usize, height: usize, pitch: f64, kind: ImageKind) -> Result<Self> {
        Image2D::new(width, height, pitch, vec![0.0; width * height], kind)
    }

    fn check_values(&self) -> Result<()> {
        let bad = match self.kind {
            ImageKind::LineIntegral | ImageKind::DepthMm => self.values.iter().find(|v| !(**v >= 0.0)),
            ImageKind::IntensityRatio => self.values.iter().find(|v| !(**v > 0.0 && **v <= 1.0)),
            ImageKind::Generic => self.values.iter().find(|v| v.is_nan()),
        };
        match bad {
            Some(v) => Err(DrrError::InvariantViolation(format!(
                "value {v} not allowed in a {} image",
                self.kind.name()
            ))),
            None => Ok(()),
        }
    }

    #[inline]
    pub fn at(&self, col: usize, row: usize) -> f64 {
        self.values[col + self.width * row]
    }

    pub fn same_shape(&self, width: usize, height: usize) -> bool {
        self.width == width && self.height == height
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Mirror the columns (left-right flip).
    pub fn flip_horizontal(&self) -> Image2D {
        let mut out = self.clone();
        for row in 0..self.height {
            out.values[row * self.width..(row + 1) * self.width].reverse();
        }
        out
    }
}

/// Binary raster (values 0/1).
#[derive(Debug, Clone, PartialEq)]
pub struct Mask2D {
    pub width: usize,
    pub height: usize,
    pub pitch: f64,
    pub values: Vec<u8>,
}

impl Mask2D {
    pub fn new(width: usize, height: usize, pitch: f64, values: Vec<u8>) -> Result<Self> {
        check_raster(width, height, pitch, values.len())?;
        if let Some(&v) = values.iter().find(|&&v| v > 1) {
            return Err(DrrError::NonBinaryMask(v));
        }
        Ok(Mask2D {
            width,
            height,
            pitch,
            values,
        })
    }

    pub fn empty(width: usize, height: usize, pitch: f64) -> Result<Self> {
        Mask2D::new(width, height, pitch, vec![0; width * height])
    }

    pub fn full(width: usize, height: usize, pitch: f64) -> Result<Self> {
        Mask2D::new(width, height, pitch, vec![1; width * height])
    }

    /// Mask of pixels whose centred coordinates `(x, y)` satisfy `inside`.
    /// Centred coordinates put the raster centre at (0, 0).
    pub fn from_fn(width: usize, height: usize, pitch: f64, inside: impl Fn(f64, f64) -> bool) -> Result<Self> {
        let cx = 0.5 * (width as f64 - 1.0);
        let cy = 0.5 * (height as f64 - 1.0);
        let mut values = vec![0u8; width * height];
        for row in 0..height {
            for col in 0..width {
                if inside(col as f64 - cx, row as f64 - cy) {
                    values[col + width * row] = 1;
                }
            }
        }
        Mask2D::new(width, height, pitch, values)
    }

    #[inline]
    pub fn at(&self, col: usize, row: usize) -> u8 {
        self.values[col + self.width * row]
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_empty(&self) -> bool {
        self.values.iter().all(|&v| v == 0)
    }

    pub fn same_shape(&self, width: usize, height: usize) -> bool {
        self.width == width && self.height == height
    }

    pub fn flip_horizontal(&self) -> Mask2D {
        let mut out = self.clone();
        for row in 0..self.height {
            out.values[row * self.width..(row + 1) * self.width].reverse();
        }
        out
    }

    /// Threshold a float raster: 1 where `value > floor`.
    pub fn from_threshold(img: &Image2D, floor: f64) -> Mask2D {
        Mask2D {
            width: img.width,
            height: img.height,
            pitch: img.pitch,
            values: img.values.iter().map(|&v| u8::from(v > floor)).collect(),
        }
    }
}

/// 8-bit grey raster for previews and PGM export.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray8 {
    pub width: usize,
    pub height: usize,
    pub values: Vec<u8>,
}

impl Gray8 {
    pub fn from_mask(mask: &Mask2D) -> Gray8 {
        Gray8 {
            width: mask.width,
            height: mask.height,
            values: mask.values.iter().map(|&v| if v == 1 { 255 } else { 0 }).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_kind_invariants() {
        assert!(Image2D::new(1, 1, 1.0, vec![-1.0], ImageKind::LineIntegral).is_err());
        assert!(Image2D::new(1, 1, 1.0, vec![0.0], ImageKind::IntensityRatio).is_err());
        assert!(Image2D::new(1, 1, 1.0, vec![1.0], ImageKind::IntensityRatio).is_ok());
        assert!(Image2D::new(2, 1, 0.0, vec![1.0, 1.0], ImageKind::Generic).is_err());
        assert!(Image2D::new(2, 2, 1.0, vec![1.0], ImageKind::Generic).is_err());
    }

    #[test]
    fn flip_twice_is_identity() {
        let img = Image2D::new(3, 2, 1.0, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], ImageKind::Generic).unwrap();
        let f = img.flip_horizontal();
        assert_eq!(f.values, vec![3.0, 2.0, 1.0, 6.0, 5.0, 4.0]);
        assert_eq!(f.flip_horizontal(), img);
    }
}
