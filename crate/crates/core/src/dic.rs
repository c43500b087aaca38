//! Subset-based local digital image correlation, used as an independent
//! cross-check of the registration pipeline.
//!
//! Seeds on a regular grid are matched by zero-normalized cross-correlation
//! over integer shifts, refined to sub-pixel precision with a quadratic fit
//! of the 3x3 correlation neighborhood around the peak. Strains come from
//! least-squares plane fits of the seed displacements inside a strain
//! window.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::DisplacementField;
use crate::image::GrayImage;
use crate::strain::StrainField;

/// Seeds whose correlation peak falls below this value are discarded.
pub const ZNCC_CUTOFF: f64 = 0.5;

/// Subset-matching parameters.
#[derive(Debug, Clone, Copy)]
pub struct DicParams {
    /// Subset radius r in pixels (subset is (2r+1)^2).
    pub subset_radius: usize,
    /// Seed grid pitch in pixels.
    pub step: usize,
    /// Integer search radius in pixels.
    pub search_radius: usize,
    /// Strain window radius in pixels.
    pub strain_window_radius: f64,
}

impl Default for DicParams {
    fn default() -> Self {
        DicParams { subset_radius: 10, step: 4, search_radius: 20, strain_window_radius: 5.0 }
    }
}

impl DicParams {
    pub fn validate(&self) -> Result<()> {
        if self.subset_radius < 5 {
            return Err(Error::Parameter(format!(
                "subset radius {} below minimum 5",
                self.subset_radius
            )));
        }
        if self.step < 1 {
            return Err(Error::Parameter("seed step must be at least 1".into()));
        }
        if self.strain_window_radius < 2.0 {
            return Err(Error::Parameter(format!(
                "strain window radius {} below minimum 2",
                self.strain_window_radius
            )));
        }
        Ok(())
    }
}

struct Subset {
    values: Vec<f64>,
    mean: f64,
    /// Centered L2 norm; zero for flat subsets.
    norm: f64,
}

fn extract_subset(img: &GrayImage, cx: usize, cy: usize, r: usize) -> Subset {
    let side = 2 * r + 1;
    let mut values = Vec::with_capacity(side * side);
    for y in cy - r..=cy + r {
        for x in cx - r..=cx + r {
            values.push(img.get(x, y));
        }
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let norm = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>().sqrt();
    Subset { values, mean, norm }
}

/// ZNCC of the reference subset against the deformed subset at (cx, cy).
fn zncc(reference: &Subset, img: &GrayImage, cx: usize, cy: usize, r: usize) -> f64 {
    let side = 2 * r + 1;
    let mut mean = 0.0;
    for y in cy - r..=cy + r {
        for x in cx - r..=cx + r {
            mean += img.get(x, y);
        }
    }
    mean /= (side * side) as f64;
    let mut dot = 0.0;
    let mut norm2 = 0.0;
    let mut i = 0;
    for y in cy - r..=cy + r {
        for x in cx - r..=cx + r {
            let d = img.get(x, y) - mean;
            dot += d * (reference.values[i] - reference.mean);
            norm2 += d * d;
            i += 1;
        }
    }
    let denom = reference.norm * norm2.sqrt();
    if denom < 1e-30 {
        return -1.0;
    }
    dot / denom
}

/// Quadratic 3x3 peak interpolation; returns the sub-pixel offset or (0, 0)
/// when the fit is not a proper maximum inside the cell.
fn quadratic_peak_offset(c: &[[f64; 3]; 3]) -> (f64, f64) {
    // orthogonal-polynomial least squares on the 3x3 stencil
    let (mut bx, mut by, mut bxx, mut byy, mut bxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (j, row) in c.iter().enumerate() {
        let y = j as f64 - 1.0;
        for (i, v) in row.iter().enumerate() {
            let x = i as f64 - 1.0;
            bx += x * v;
            by += y * v;
            bxx += (x * x - 2.0 / 3.0) * v;
            byy += (y * y - 2.0 / 3.0) * v;
            bxy += x * y * v;
        }
    }
    bx /= 6.0;
    by /= 6.0;
    bxx /= 2.0;
    byy /= 2.0;
    bxy /= 4.0;
    // stationary point of the fitted quadratic
    let h11 = 2.0 * bxx;
    let h22 = 2.0 * byy;
    let det = h11 * h22 - bxy * bxy;
    if h11 >= 0.0 || det <= 0.0 {
        return (0.0, 0.0);
    }
    let dx = (-bx * h22 + by * bxy) / det;
    let dy = (-by * h11 + bx * bxy) / det;
    if dx.abs() > 1.0 || dy.abs() > 1.0 {
        return (0.0, 0.0);
    }
    (dx, dy)
}

/// Subset displacement of `deformed` relative to `reference` on the seed
/// grid. The dense output marks only seed pixels valid; seeds with a peak
/// correlation below [`ZNCC_CUTOFF`], or with no in-bounds candidate, are
/// invalid.
pub fn dic_displacement(
    reference: &GrayImage,
    deformed: &GrayImage,
    params: &DicParams,
) -> Result<DisplacementField> {
    params.validate()?;
    let (w, h) = (reference.width(), reference.height());
    if deformed.width() != w || deformed.height() != h {
        return Err(Error::Parameter(format!(
            "image dimensions differ: {}x{} vs {}x{}",
            w,
            h,
            deformed.width(),
            deformed.height()
        )));
    }
    let r = params.subset_radius;
    if w < 2 * r + 1 || h < 2 * r + 1 {
        return Err(Error::Parameter(format!(
            "images {w}x{h} cannot hold a subset of radius {r}"
        )));
    }

    let mut seeds = Vec::new();
    let mut y = r;
    while y + r < h {
        let mut x = r;
        while x + r < w {
            // subsets must lie fully inside the ROI
            let mut ok = true;
            'roi: for sy in y - r..=y + r {
                for sx in x - r..=x + r {
                    if !reference.in_roi(sx, sy) {
                        ok = false;
                        break 'roi;
                    }
                }
            }
            if ok {
                seeds.push((x, y));
            }
            x += params.step;
        }
        y += params.step;
    }

    let search = params.search_radius as isize;
    let results: Vec<Option<(usize, usize, f64, f64)>> = seeds
        .par_iter()
        .map(|&(sx, sy)| {
            let subset = extract_subset(reference, sx, sy, r);
            if subset.norm < 1e-12 {
                return None; // textureless subset
            }
            let mut best = (0isize, 0isize, -2.0f64);
            for dy in -search..=search {
                let cy = sy as isize + dy;
                if cy < r as isize || cy + r as isize >= h as isize {
                    continue;
                }
                for dx in -search..=search {
                    let cx = sx as isize + dx;
                    if cx < r as isize || cx + r as isize >= w as isize {
                        continue;
                    }
                    let c = zncc(&subset, deformed, cx as usize, cy as usize, r);
                    if c > best.2 {
                        best = (dx, dy, c);
                    }
                }
            }
            if best.2 < ZNCC_CUTOFF {
                return None;
            }
            // sub-pixel refinement on the 3x3 neighborhood of the peak; a
            // peak at exactly 1 is already a perfect match and the fit
            // would only chase interpolation asymmetry
            let mut offset = (0.0, 0.0);
            if best.2 < 1.0 - 1e-12 {
                let mut grid = [[f64::NAN; 3]; 3];
                let mut complete = true;
                for (j, row) in grid.iter_mut().enumerate() {
                    for (i, cell) in row.iter_mut().enumerate() {
                        let cx = sx as isize + best.0 + i as isize - 1;
                        let cy = sy as isize + best.1 + j as isize - 1;
                        if cx < r as isize
                            || cy < r as isize
                            || cx + r as isize >= w as isize
                            || cy + r as isize >= h as isize
                        {
                            complete = false;
                        } else {
                            *cell = zncc(&subset, deformed, cx as usize, cy as usize, r);
                        }
                    }
                }
                if complete {
                    offset = quadratic_peak_offset(&grid);
                }
            }
            Some((sx, sy, best.0 as f64 + offset.0, best.1 as f64 + offset.1))
        })
        .collect();

    let mut field = DisplacementField::from_parts(
        w,
        h,
        vec![0.0; w * h],
        vec![0.0; w * h],
        vec![false; w * h],
    )?;
    let mut any = false;
    for r in results.into_iter().flatten() {
        field.set(r.0, r.1, r.2, r.3);
        any = true;
    }
    if !any {
        return Err(Error::NoValidSeeds);
    }
    Ok(field)
}

/// Strains from a seed displacement field: least-squares plane fit of u and
/// v over the valid seeds within `strain_window_radius` of each seed, with
/// the Green-Lagrange formulas applied to the fitted gradients. Seeds with
/// fewer than three usable neighbors (or a degenerate fit) are invalid.
pub fn dic_strain(field: &DisplacementField, strain_window_radius: f64) -> Result<StrainField> {
    if strain_window_radius < 2.0 {
        return Err(Error::Parameter(format!(
            "strain window radius {strain_window_radius} below minimum 2"
        )));
    }
    let (w, h) = (field.width(), field.height());
    let seeds: Vec<(usize, usize)> = (0..w * h)
        .filter(|i| field.valid[*i])
        .map(|i| (i % w, i / w))
        .collect();
    if seeds.len() < 3 {
        return Err(Error::NoValidSeeds);
    }

    let radius = strain_window_radius;
    let r_ceil = radius.ceil() as isize;
    let valid_at = |x: isize, y: isize| -> bool {
        x >= 0 && y >= 0 && x < w as isize && y < h as isize && field.valid[y as usize * w + x as usize]
    };

    let results: Vec<Option<(usize, f64, f64, f64)>> = seeds
        .par_iter()
        .map(|&(sx, sy)| {
            // gather neighbors in the window
            let mut pts: Vec<(f64, f64, f64, f64)> = Vec::new();
            for dy in -r_ceil..=r_ceil {
                for dx in -r_ceil..=r_ceil {
                    if (dx * dx + dy * dy) as f64 > radius * radius {
                        continue;
                    }
                    let (x, y) = (sx as isize + dx, sy as isize + dy);
                    if valid_at(x, y) {
                        let i = y as usize * w + x as usize;
                        pts.push((dx as f64, dy as f64, field.u[i], field.v[i]));
                    }
                }
            }
            if pts.len() < 3 {
                return None;
            }
            // normal equations of the plane fit a + b dx + c dy
            let n = pts.len() as f64;
            let (mut sx1, mut sy1, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for &(dx, dy, _, _) in &pts {
                sx1 += dx;
                sy1 += dy;
                sxx += dx * dx;
                syy += dy * dy;
                sxy += dx * dy;
            }
            let m = [[n, sx1, sy1], [sx1, sxx, sxy], [sy1, sxy, syy]];
            let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
            if det.abs() < 1e-9 {
                return None; // collinear seeds
            }
            let solve = |r0: f64, r1: f64, r2: f64| -> (f64, f64) {
                // Cramer's rule for the slope components of [a, b, c]
                let det_b = m[0][0] * (r1 * m[2][2] - m[1][2] * r2)
                    - r0 * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * r2 - r1 * m[2][0]);
                let det_c = m[0][0] * (m[1][1] * r2 - r1 * m[2][1])
                    - m[0][1] * (m[1][0] * r2 - r1 * m[2][0])
                    + r0 * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
                (det_b / det, det_c / det)
            };
            let (mut ru0, mut ru1, mut ru2) = (0.0, 0.0, 0.0);
            let (mut rv0, mut rv1, mut rv2) = (0.0, 0.0, 0.0);
            for &(dx, dy, u, v) in &pts {
                ru0 += u;
                ru1 += u * dx;
                ru2 += u * dy;
                rv0 += v;
                rv1 += v * dx;
                rv2 += v * dy;
            }
            let (ux, uy) = solve(ru0, ru1, ru2);
            let (vx, vy) = solve(rv0, rv1, rv2);
            let exx = 0.5 * (2.0 * ux + ux * ux + vx * vx);
            let eyy = 0.5 * (2.0 * vy + uy * uy + vy * vy);
            let exy = 0.5 * (uy + vx + ux * uy + vx * vy);
            Some((sy * w + sx, exx, eyy, exy))
        })
        .collect();

    let mut out = StrainField::empty(w, h);
    for r in results.into_iter().flatten() {
        out.exx[r.0] = r.1;
        out.eyy[r.0] = r.2;
        out.exy[r.0] = r.3;
        out.valid[r.0] = true;
    }
    Ok(out)
}
