//! Gaussian smoothing and subsampling for multi-resolution registration.

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Separable Gaussian smoothing with mirror boundaries.
fn gaussian_smooth(image: &GrayImage, sigma: f64) -> Vec<f64> {
    let half = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut kernel = Vec::with_capacity(2 * half as usize + 1);
    for i in -half..=half {
        kernel.push((-0.5 * (i as f64 / sigma).powi(2)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= sum;
    }

    let (w, h) = (image.width() as isize, image.height() as isize);
    let mirror = |i: isize, n: isize| -> usize {
        if n == 1 {
            return 0;
        }
        let period = 2 * n - 2;
        let mut m = i % period;
        if m < 0 {
            m += period;
        }
        if m >= n {
            m = period - m;
        }
        m as usize
    };

    let src = image.pixels();
    let mut rows = vec![0.0; (w * h) as usize];
    for y in 0..h as usize {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sx = mirror(x + ki as isize - half, w);
                acc += k * src[y * w as usize + sx];
            }
            rows[y * w as usize + x as usize] = acc;
        }
    }
    let mut out = vec![0.0; (w * h) as usize];
    for y in 0..h {
        for x in 0..w as usize {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sy = mirror(y + ki as isize - half, h);
                acc += k * rows[sy * w as usize + x];
            }
            out[y as usize * w as usize + x] = acc;
        }
    }
    out
}

/// Resolution level `level` of the image pyramid.
///
/// Level 0 is the input unchanged. Level k smooths with sigma = 2^(k-1)
/// pixels and subsamples by 2^k. A mask is subsampled conservatively: a
/// coarse pixel is inside the region only if every fine pixel under it is.
pub fn pyramid_level(image: &GrayImage, level: u32) -> Result<GrayImage> {
    if level == 0 {
        return Ok(image.clone());
    }
    let factor = 1usize << level;
    let w = image.width().div_ceil(factor);
    let h = image.height().div_ceil(factor);
    if w < 8 || h < 8 {
        return Err(Error::LevelTooDeep { level, width: w, height: h });
    }

    let sigma = f64::from(1u32 << (level - 1));
    let smoothed = gaussian_smooth(image, sigma);

    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            // Smoothing cannot leave [0,1] but guard rounding noise.
            data.push(smoothed[(y * factor) * image.width() + x * factor].clamp(0.0, 1.0));
        }
    }
    let out = GrayImage::from_vec(w, h, data)?;

    if let Some(mask) = image.mask() {
        let mut coarse = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let x1 = ((x + 1) * factor).min(image.width());
                let y1 = ((y + 1) * factor).min(image.height());
                let mut all_in = true;
                'block: for fy in y * factor..y1 {
                    for fx in x * factor..x1 {
                        if !mask[fy * image.width() + fx] {
                            all_in = false;
                            break 'block;
                        }
                    }
                }
                coarse.push(all_in);
            }
        }
        return out.with_mask(coarse);
    }
    Ok(out)
}
