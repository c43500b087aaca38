//! Grayscale image storage, sub-pixel interpolation and image pyramids.

mod pgm;
mod pyramid;
pub(crate) mod spline;

pub use pgm::{load_pgm, load_roi_mask, save_pgm};
pub use pyramid::pyramid_level;
pub use spline::CubicSpline;

use crate::error::{Error, Result};

/// A continuous position in image coordinates: x rightward, y downward,
/// measured in pixels. Pixel (i, j) sits at the integer point (i, j).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// Sub-pixel intensity lookup scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    Bilinear,
    /// Cubic B-spline with coefficient prefiltering; reproduces pixel
    /// values exactly at integer coordinates.
    CubicBspline,
}

/// A 2-D grayscale image with intensities normalized to `[0, 1]` and an
/// optional region-of-interest mask.
///
/// Immutable after construction; all queries are pure reads and safe to
/// share across workers.
#[derive(Debug, Clone)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
    mask: Option<Vec<bool>>,
}

impl GrayImage {
    /// Build an image from row-major intensities.
    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Parameter(format!(
                "image dimensions must be at least 1x1, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Parameter(format!(
                "intensity buffer has {} entries, expected {}",
                data.len(),
                width * height
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Parameter(format!(
                "intensity {v} outside [0, 1]"
            )));
        }
        Ok(GrayImage { width, height, data, mask: None })
    }

    /// Build a constant image.
    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::from_vec(width, height, vec![value; width * height])
    }

    /// Build an image by evaluating `f(x, y)` at every pixel; values are
    /// clamped to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self::from_vec(width, height, data)
    }

    /// Attach a region-of-interest mask (`true` = inside).
    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.width * self.height {
            return Err(Error::Parameter(format!(
                "mask has {} entries, expected {}",
                mask.len(),
                self.width * self.height
            )));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    /// Whether pixel (x, y) belongs to the region of interest.
    #[inline]
    pub fn in_roi(&self, x: usize, y: usize) -> bool {
        match &self.mask {
            Some(m) => m[y * self.width + x],
            None => true,
        }
    }

    /// Whether a continuous point lies inside the image domain
    /// `[0, width-1] x [0, height-1]`.
    #[inline]
    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0
            && p.y >= 0.0
            && p.x <= (self.width - 1) as f64
            && p.y <= (self.height - 1) as f64
    }

    pub(crate) fn out_of_bounds(&self, p: Point) -> Error {
        Error::OutOfBounds {
            x: p.x,
            y: p.y,
            max_x: (self.width - 1) as f64,
            max_y: (self.height - 1) as f64,
        }
    }

    /// Mean and variance of the intensities (mask ignored).
    pub fn mean_var(&self) -> (f64, f64) {
        let n = self.data.len() as f64;
        let mean = self.data.iter().sum::<f64>() / n;
        let var = self.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var)
    }
}

/// Interpolated intensity at a continuous point.
///
/// Both schemes reproduce the stored value exactly at integer coordinates
/// (the cubic variant via coefficient prefiltering) and reproduce constant
/// images everywhere. Queries outside the image domain are an error; callers
/// that may leave the domain must check [`GrayImage::contains`] first.
///
/// For repeated cubic lookups build one [`CubicSpline`] and reuse it; this
/// convenience prefilters on every call.
pub fn interpolate(image: &GrayImage, p: Point, scheme: Interpolation) -> Result<f64> {
    match scheme {
        Interpolation::Bilinear => bilinear(image, p),
        Interpolation::CubicBspline => CubicSpline::new(image).value(p),
    }
}

/// Spatial intensity derivative (dI/dx, dI/dy) of the cubic B-spline
/// interpolant at `p`. Same domain contract as [`interpolate`].
pub fn intensity_gradient(image: &GrayImage, p: Point) -> Result<(f64, f64)> {
    let (_, gx, gy) = CubicSpline::new(image).value_and_gradient(p)?;
    Ok((gx, gy))
}

fn bilinear(image: &GrayImage, p: Point) -> Result<f64> {
    if !image.contains(p) {
        return Err(image.out_of_bounds(p));
    }
    let x0 = p.x.floor() as usize;
    let y0 = p.y.floor() as usize;
    let fx = p.x - x0 as f64;
    let fy = p.y - y0 as f64;
    // At the far edge the +1 neighbor has weight 0; clamp its index.
    let x1 = (x0 + 1).min(image.width - 1);
    let y1 = (y0 + 1).min(image.height - 1);
    let v00 = image.get(x0, y0);
    let v10 = image.get(x1, y0);
    let v01 = image.get(x0, y1);
    let v11 = image.get(x1, y1);
    Ok(v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy)
}
