//! Quantitative agreement metrics: mean absolute percentage error between
//! fields and structural similarity between images.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Pixels whose reference magnitude falls below this floor are excluded
/// from the MAPE sum and count (the percentage is undefined at zero).
pub const MAPE_DENOMINATOR_FLOOR: f64 = 1e-6;

/// Mean absolute percentage error of one field component.
#[derive(Debug, Clone, Copy)]
pub struct MapeReport {
    /// Mean of |reference - test| / |reference| over used pixels, as a
    /// fraction (0.03 = 3%).
    pub value: f64,
    /// Pixels that entered the mean.
    pub used: usize,
    /// Masked-in pixels excluded by the denominator floor.
    pub excluded: usize,
}

/// MAPE of `test` against `reference` over `mask`-included pixels.
///
/// Pixels with |reference| below [`MAPE_DENOMINATOR_FLOOR`] are excluded
/// and counted; an evaluation where nothing survives the floor is an error.
pub fn mape(reference: &[f64], test: &[f64], mask: &[bool]) -> Result<MapeReport> {
    if reference.len() != test.len() || reference.len() != mask.len() {
        return Err(Error::Parameter(format!(
            "mape inputs differ in length: {} / {} / {}",
            reference.len(),
            test.len(),
            mask.len()
        )));
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut excluded = 0usize;
    for i in 0..reference.len() {
        if !mask[i] {
            continue;
        }
        if reference[i].abs() <= MAPE_DENOMINATOR_FLOOR {
            excluded += 1;
            continue;
        }
        sum += (reference[i] - test[i]).abs() / reference[i].abs();
        used += 1;
    }
    if used == 0 {
        return Err(Error::UndefinedMape { excluded });
    }
    Ok(MapeReport { value: sum / used as f64, used, excluded })
}

/// Structural-similarity map and mean over the evaluated region.
#[derive(Debug, Clone)]
pub struct SsimReport {
    width: usize,
    height: usize,
    /// Per-pixel SSIM where evaluated (window fully inside image and
    /// region); NaN elsewhere.
    pub map: Vec<f64>,
    pub evaluated: Vec<bool>,
    pub mean: f64,
}

impl SsimReport {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Render the map as an 8-bit PGM heat image, mapping [-1, 1] to
    /// [0, 255]; unevaluated pixels map to 0.
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        for (v, e) in self.map.iter().zip(&self.evaluated) {
            let q = if *e { ((v + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0) as u8 } else { 0 };
            out.push(q);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("# warpfield field schema=ssim units=1\nx,y,ssim,valid\n");
        for y in 0..self.height {
            for x in 0..self.width {
                let i = y * self.width + x;
                let v = if self.evaluated[i] { self.map[i] } else { 0.0 };
                s.push_str(&format!("{},{},{},{}\n", x, y, v, u8::from(self.evaluated[i])));
            }
        }
        s
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_pgm_bytes())?;
        Ok(())
    }
}

const SSIM_WINDOW: usize = 21;
const SSIM_SIGMA: f64 = 1.0;
const SSIM_C1: f64 = 1e-4; // (0.01 * L)^2 with L = 1
const SSIM_C2: f64 = 9e-4; // (0.03 * L)^2

/// Per-pixel SSIM under a 21x21 Gaussian window (sigma = 1 px, truncated
/// and renormalized to unit sum), evaluated wherever the full window fits
/// inside the image and the optional region mask; the mean excludes the
/// border band.
pub fn ssim(a: &GrayImage, b: &GrayImage, region: Option<&[bool]>) -> Result<SsimReport> {
    let (w, h) = (a.width(), a.height());
    if b.width() != w || b.height() != h {
        return Err(Error::Parameter(format!(
            "ssim dimension mismatch: {}x{} vs {}x{}",
            w,
            h,
            b.width(),
            b.height()
        )));
    }
    if let Some(r) = region {
        if r.len() != w * h {
            return Err(Error::Parameter("ssim region mask has wrong length".into()));
        }
        if !r.iter().any(|v| *v) {
            return Err(Error::EmptyRoi);
        }
    }
    let half = SSIM_WINDOW / 2;
    let mut kernel = [0.0f64; SSIM_WINDOW];
    for (i, k) in kernel.iter_mut().enumerate() {
        let d = i as f64 - half as f64;
        *k = (-0.5 * (d / SSIM_SIGMA).powi(2)).exp();
    }
    let ksum: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= ksum;
    }

    let in_region = |x: usize, y: usize| region.map_or(true, |r| r[y * w + x]);

    let mut map = vec![f64::NAN; w * h];
    let mut evaluated = vec![false; w * h];

    let rows: Vec<usize> = (0..h).collect();
    let results: Vec<Vec<(usize, f64)>> = rows
        .par_iter()
        .map(|&y| {
            let mut row = Vec::new();
            if y < half || y + half >= h {
                return row;
            }
            'pixel: for x in half..w - half {
                // full window must sit inside the region
                for wy in y - half..=y + half {
                    for wx in x - half..=x + half {
                        if !in_region(wx, wy) {
                            continue 'pixel;
                        }
                    }
                }
                let (mut mu_a, mut mu_b) = (0.0, 0.0);
                let (mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0);
                for (wy, ky) in (y - half..=y + half).zip(kernel.iter()) {
                    for (wx, kx) in (x - half..=x + half).zip(kernel.iter()) {
                        let wgt = ky * kx;
                        let va = a.get(wx, wy);
                        let vb = b.get(wx, wy);
                        mu_a += wgt * va;
                        mu_b += wgt * vb;
                        aa += wgt * va * va;
                        bb += wgt * vb * vb;
                        ab += wgt * va * vb;
                    }
                }
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                let v = ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2));
                row.push((x, v));
            }
            row
        })
        .collect();

    let mut sum = 0.0;
    let mut count = 0usize;
    for (y, row) in results.into_iter().enumerate() {
        for (x, v) in row {
            map[y * w + x] = v;
            evaluated[y * w + x] = true;
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyRoi);
    }
    Ok(SsimReport { width: w, height: h, map, evaluated, mean: sum / count as f64 })
}
