//! Random sampling of fixed-image pixels for stochastic metric evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{GrayImage, Point};

/// The pixel centers of a region of interest, cached for repeated draws.
#[derive(Debug, Clone)]
pub struct RoiPixels {
    width: usize,
    height: usize,
    pixels: Vec<(u32, u32)>,
}

impl RoiPixels {
    pub fn collect(image: &GrayImage) -> Result<Self> {
        let mut pixels = Vec::new();
        for y in 0..image.height() {
            for x in 0..image.width() {
                if image.in_roi(x, y) {
                    pixels.push((x as u32, y as u32));
                }
            }
        }
        if pixels.is_empty() {
            return Err(Error::EmptyRoi);
        }
        Ok(RoiPixels { width: image.width(), height: image.height(), pixels })
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// A randomly drawn set of continuous sample positions inside the ROI.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub points: Vec<Point>,
    pub seed: u64,
}

impl SampleSet {
    /// Draw `n` points uniformly over the ROI pixel centers (with
    /// replacement), jittered uniformly within half a pixel per axis and
    /// clamped to the image domain. Deterministic for a given seed.
    pub fn draw(image: &GrayImage, n: usize, seed: u64) -> Result<Self> {
        let roi = RoiPixels::collect(image)?;
        Ok(Self::draw_from(&roi, n, seed))
    }

    /// Same draw, reusing a cached ROI pixel list.
    pub fn draw_from(roi: &RoiPixels, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let max_x = (roi.width - 1) as f64;
        let max_y = (roi.height - 1) as f64;
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let (px, py) = roi.pixels[rng.random_range(0..roi.pixels.len())];
            let x = (f64::from(px) + rng.random_range(-0.5..0.5)).clamp(0.0, max_x);
            let y = (f64::from(py) + rng.random_range(-0.5..0.5)).clamp(0.0, max_y);
            points.push(Point::new(x, y));
        }
        SampleSet { points, seed }
    }
}
