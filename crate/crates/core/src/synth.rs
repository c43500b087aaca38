//! Ground-truth benchmark factory: speckle patterns and analytically warped
//! image pairs and sequences with exact displacement fields.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::DisplacementField;
use crate::image::{CubicSpline, GrayImage, Point};
use crate::rng::{cell_normal, derive_seed};

/// Axis along which a sinusoidal displacement varies (and acts).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// A closed-form displacement field, evaluable and differentiable anywhere.
#[derive(Debug, Clone, Copy)]
pub enum AnalyticField {
    /// Uniform displacement (tx, ty).
    Translation { tx: f64, ty: f64 },
    /// u(X) = (F - I) X + offset.
    Affine { f: [[f64; 2]; 2], offset: (f64, f64) },
    /// Along X: u = (A sin(2 pi x / lambda), 0); along Y analogously.
    Sinusoid { amplitude: f64, period: f64, axis: Axis },
}

impl AnalyticField {
    /// Uniform stretch/rotation about a center point plus a translation:
    /// u(X) = (F - I)(X - center) + t.
    pub fn affine_about(f: [[f64; 2]; 2], center: (f64, f64), t: (f64, f64)) -> Self {
        let ox = t.0 - (f[0][0] - 1.0) * center.0 - f[0][1] * center.1;
        let oy = t.1 - f[1][0] * center.0 - (f[1][1] - 1.0) * center.1;
        AnalyticField::Affine { f, offset: (ox, oy) }
    }

    /// Rotation by `theta` (radians) about `center` plus translation `t`.
    pub fn rotation_about(theta: f64, center: (f64, f64), t: (f64, f64)) -> Self {
        let (s, c) = theta.sin_cos();
        Self::affine_about([[c, -s], [s, c]], center, t)
    }

    /// Displacement at a continuous point.
    pub fn displacement(&self, p: Point) -> (f64, f64) {
        match *self {
            AnalyticField::Translation { tx, ty } => (tx, ty),
            AnalyticField::Affine { f, offset } => (
                (f[0][0] - 1.0) * p.x + f[0][1] * p.y + offset.0,
                f[1][0] * p.x + (f[1][1] - 1.0) * p.y + offset.1,
            ),
            AnalyticField::Sinusoid { amplitude, period, axis } => {
                let k = 2.0 * std::f64::consts::PI / period;
                match axis {
                    Axis::X => (amplitude * (k * p.x).sin(), 0.0),
                    Axis::Y => (0.0, amplitude * (k * p.y).sin()),
                }
            }
        }
    }

    /// Displacement gradient (du/dx, du/dy, dv/dx, dv/dy) at a point.
    pub fn gradient(&self, p: Point) -> (f64, f64, f64, f64) {
        match *self {
            AnalyticField::Translation { .. } => (0.0, 0.0, 0.0, 0.0),
            AnalyticField::Affine { f, .. } => {
                (f[0][0] - 1.0, f[0][1], f[1][0], f[1][1] - 1.0)
            }
            AnalyticField::Sinusoid { amplitude, period, axis } => {
                let k = 2.0 * std::f64::consts::PI / period;
                match axis {
                    Axis::X => (amplitude * k * (k * p.x).cos(), 0.0, 0.0, 0.0),
                    Axis::Y => (0.0, 0.0, 0.0, amplitude * k * (k * p.y).cos()),
                }
            }
        }
    }

    /// Exact Green-Lagrange strain components at a point.
    pub fn green_lagrange(&self, p: Point) -> (f64, f64, f64) {
        let (ux, uy, vx, vy) = self.gradient(p);
        (
            0.5 * (2.0 * ux + ux * ux + vx * vx),
            0.5 * (2.0 * vy + uy * uy + vy * vy),
            0.5 * (uy + vx + ux * uy + vx * vy),
        )
    }

    /// The same field with its deviation from identity scaled by `s`
    /// (deformation-path parameterization for sequences).
    pub fn scaled(&self, s: f64) -> Self {
        match *self {
            AnalyticField::Translation { tx, ty } => {
                AnalyticField::Translation { tx: s * tx, ty: s * ty }
            }
            AnalyticField::Affine { f, offset } => AnalyticField::Affine {
                f: [
                    [1.0 + s * (f[0][0] - 1.0), s * f[0][1]],
                    [s * f[1][0], 1.0 + s * (f[1][1] - 1.0)],
                ],
                offset: (s * offset.0, s * offset.1),
            },
            AnalyticField::Sinusoid { amplitude, period, axis } => {
                AnalyticField::Sinusoid { amplitude: s * amplitude, period, axis }
            }
        }
    }

    /// Verify det(I + grad u) > 0 over the pixel grid (no folding).
    pub fn check_no_folding(&self, width: usize, height: usize) -> Result<()> {
        for y in 0..height {
            for x in 0..width {
                let (ux, uy, vx, vy) = self.gradient(Point::new(x as f64, y as f64));
                let det = (1.0 + ux) * (1.0 + vy) - uy * vx;
                if det <= 0.0 {
                    return Err(Error::Parameter(format!(
                        "deformation folds at ({x}, {y}): det = {det}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Exact displacement sampled on the pixel grid.
    pub fn sample_grid(&self, width: usize, height: usize) -> DisplacementField {
        let mut out = DisplacementField::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = self.displacement(Point::new(x as f64, y as f64));
                out.set(x, y, u, v);
            }
        }
        out
    }
}

/// Parameters of the speckle generator.
#[derive(Debug, Clone, Copy)]
pub struct SpeckleParams {
    /// Gaussian blobs per 100 square pixels.
    pub density: f64,
    /// Blob radius range in pixels, within [1, 8].
    pub radius_min: f64,
    pub radius_max: f64,
}

impl Default for SpeckleParams {
    fn default() -> Self {
        SpeckleParams { density: 3.0, radius_min: 2.0, radius_max: 4.0 }
    }
}

/// Random speckle texture: Gaussian blobs of random polarity on a 0.5
/// background, clamped to [0, 1]. Deterministic per seed.
pub fn generate_speckle(
    width: usize,
    height: usize,
    params: SpeckleParams,
    seed: u64,
) -> Result<GrayImage> {
    if !(params.density > 0.0) {
        return Err(Error::Parameter(format!("speckle density {} must be > 0", params.density)));
    }
    if !(params.radius_min >= 1.0
        && params.radius_max <= 8.0
        && params.radius_min <= params.radius_max)
    {
        return Err(Error::Parameter(format!(
            "blob radius range [{}, {}] must lie within [1, 8]",
            params.radius_min, params.radius_max
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = (params.density * (width * height) as f64 / 100.0).round() as usize;
    let mut buf = vec![0.5f64; width * height];
    for _ in 0..count {
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        let radius = rng.random_range(params.radius_min..=params.radius_max);
        let amplitude = rng.random_range(0.35..0.75);
        let polarity = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let sigma = radius / 2.0;
        let reach = (3.0 * sigma).ceil() as isize;
        let x0 = ((cx as isize) - reach).max(0);
        let x1 = ((cx as isize) + reach).min(width as isize - 1);
        let y0 = ((cy as isize) - reach).max(0);
        let y1 = ((cy as isize) + reach).min(height as isize - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                buf[y as usize * width + x as usize] +=
                    polarity * amplitude * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    for v in buf.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    GrayImage::from_vec(width, height, buf)
}

/// Invert the forward map x = X + u(X) at `x` by fixed-point iteration.
fn invert_at(field: &AnalyticField, x: Point) -> Option<Point> {
    let mut p = x;
    for _ in 0..50 {
        let (u, v) = field.displacement(p);
        let next = Point::new(x.x - u, x.y - v);
        let step = ((next.x - p.x).powi(2) + (next.y - p.y).powi(2)).sqrt();
        p = next;
        if step < 1e-10 {
            return Some(p);
        }
    }
    None
}

/// A warped pair with exact ground truth.
pub struct SyntheticPair {
    /// The undeformed frame (base plus noise).
    pub reference: GrayImage,
    /// The deformed frame: satisfies deformed(X + u(X)) = reference(X)
    /// before noise.
    pub deformed: GrayImage,
    /// Forward material displacement sampled exactly on the pixel grid.
    pub truth: DisplacementField,
}

/// Warp `base` by the analytic field (backward mapping through the exact
/// inverse) and add independent Gaussian sensor noise of standard deviation
/// `sigma` to both frames. Ground truth is bit-exact: the closed form
/// evaluated at grid points.
pub fn generate_pair(
    base: &GrayImage,
    field: &AnalyticField,
    sigma: f64,
    seed: u64,
) -> Result<SyntheticPair> {
    if sigma < 0.0 {
        return Err(Error::Parameter(format!("noise sigma {sigma} must be >= 0")));
    }
    let (w, h) = (base.width(), base.height());
    field.check_no_folding(w, h)?;

    let spline = CubicSpline::new(base);
    let max_x = (w - 1) as f64;
    let max_y = (h - 1) as f64;

    let rows: Vec<usize> = (0..h).collect();
    let warped_rows: std::result::Result<Vec<Vec<f64>>, Error> = rows
        .par_iter()
        .map(|&y| {
            let mut row = Vec::with_capacity(w);
            for x in 0..w {
                let p = Point::new(x as f64, y as f64);
                let inv = invert_at(field, p)
                    .ok_or(Error::InversionFailed { x, y })?;
                // edge extension: content pulled from outside the frame
                // repeats the boundary; node coordinates (within rounding
                // noise) read the pixel directly
                let snap = |v: f64| {
                    let r = v.round();
                    if (v - r).abs() < 1e-9 {
                        r
                    } else {
                        v
                    }
                };
                let cx = snap(inv.x.clamp(0.0, max_x));
                let cy = snap(inv.y.clamp(0.0, max_y));
                let v = if cx.fract() == 0.0 && cy.fract() == 0.0 {
                    base.get(cx as usize, cy as usize)
                } else {
                    spline.value(Point::new(cx, cy))?.clamp(0.0, 1.0)
                };
                row.push(v);
            }
            Ok(row)
        })
        .collect();
    let warped: Vec<f64> = warped_rows?.into_iter().flatten().collect();

    let noise_ref = derive_seed(seed, "noise-reference", 0);
    let noise_def = derive_seed(seed, "noise-deformed", 0);
    let add_noise = |src: &[f64], noise_seed: u64| -> Vec<f64> {
        if sigma == 0.0 {
            return src.to_vec();
        }
        let mut out = Vec::with_capacity(src.len());
        for (i, v) in src.iter().enumerate() {
            let n = cell_normal(noise_seed, (i % w) as u64, (i / w) as u64);
            out.push((v + sigma * n).clamp(0.0, 1.0));
        }
        out
    };

    let reference = GrayImage::from_vec(w, h, add_noise(base.pixels(), noise_ref))?;
    let deformed = GrayImage::from_vec(w, h, add_noise(&warped, noise_def))?;
    let truth = field.sample_grid(w, h);
    Ok(SyntheticPair { reference, deformed, truth })
}

/// A sequence of frames deformed along the path s = i / (n - 1) of the
/// field, with cumulative ground truth per frame.
pub struct SyntheticSequence {
    pub frames: Vec<GrayImage>,
    /// `truths[i]` is the exact displacement from frame 0 to frame i+1.
    pub truths: Vec<DisplacementField>,
}

pub fn generate_sequence(
    base: &GrayImage,
    field: &AnalyticField,
    n_frames: usize,
    sigma: f64,
    seed: u64,
) -> Result<SyntheticSequence> {
    if n_frames < 2 {
        return Err(Error::Parameter(format!("sequence needs at least 2 frames, got {n_frames}")));
    }
    let mut frames = Vec::with_capacity(n_frames);
    let mut truths = Vec::with_capacity(n_frames - 1);
    for i in 0..n_frames {
        let s = i as f64 / (n_frames - 1) as f64;
        let step_field = field.scaled(s);
        let pair = generate_pair(base, &step_field, sigma, derive_seed(seed, "frame", i as u64))?;
        if i == 0 {
            frames.push(pair.reference);
        } else {
            frames.push(pair.deformed);
            truths.push(pair.truth);
        }
    }
    Ok(SyntheticSequence { frames, truths })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strain::green_lagrange_strain;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn speckle_is_deterministic() {
        let p = SpeckleParams::default();
        let a = generate_speckle(128, 96, p, 7).unwrap();
        let b = generate_speckle(128, 96, p, 7).unwrap();
        assert_eq!(a.pixels(), b.pixels());
        let c = generate_speckle(128, 96, p, 8).unwrap();
        assert_ne!(a.pixels(), c.pixels());
    }

    #[test]
    fn sparse_speckle_stays_near_background() {
        let p = SpeckleParams { density: 0.01, ..SpeckleParams::default() };
        let img = generate_speckle(200, 200, p, 3).unwrap();
        let near = img.pixels().iter().filter(|v| (**v - 0.5).abs() <= 0.02).count();
        assert!(
            near as f64 >= 0.99 * (200.0 * 200.0),
            "only {near} of 40000 pixels near background"
        );
    }

    #[test]
    fn default_speckle_has_texture_and_range() {
        let img = generate_speckle(256, 256, SpeckleParams::default(), 11).unwrap();
        let (_, var) = img.mean_var();
        assert!(var.sqrt() > 0.1, "sd {}", var.sqrt());
        let min = img.pixels().iter().cloned().fold(f64::INFINITY, f64::min);
        let max = img.pixels().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(min <= 0.1 && max >= 0.9, "support [{min}, {max}]");
    }

    #[test]
    fn speckle_rejects_bad_parameters() {
        let bad = SpeckleParams { density: 0.0, ..SpeckleParams::default() };
        assert!(generate_speckle(64, 64, bad, 0).is_err());
        let bad = SpeckleParams { radius_min: 0.5, ..SpeckleParams::default() };
        assert!(generate_speckle(64, 64, bad, 0).is_err());
        let bad = SpeckleParams { radius_max: 9.0, ..SpeckleParams::default() };
        assert!(generate_speckle(64, 64, bad, 0).is_err());
    }

    #[test]
    fn zero_field_pair_is_bitwise_identity() {
        let base = generate_speckle(64, 48, SpeckleParams::default(), 1).unwrap();
        let field = AnalyticField::Translation { tx: 0.0, ty: 0.0 };
        let pair = generate_pair(&base, &field, 0.0, 5).unwrap();
        assert_eq!(pair.reference.pixels(), base.pixels());
        assert_eq!(pair.deformed.pixels(), base.pixels());
        assert_eq!(pair.truth.max_magnitude(), 0.0);
    }

    #[test]
    fn affine_truth_reproduces_closed_form_strain() {
        let base = generate_speckle(64, 64, SpeckleParams::default(), 2).unwrap();
        let field = AnalyticField::Affine { f: [[1.1, 0.0], [0.0, 1.0]], offset: (0.0, 0.0) };
        let pair = generate_pair(&base, &field, 0.0, 6).unwrap();
        let strain = green_lagrange_strain(&pair.truth, (1.0, 1.0)).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                let (exx, eyy, exy) = strain.get(x, y).unwrap();
                assert!((exx - 0.105).abs() < 1e-9, "({x},{y}): {exx}");
                assert!(eyy.abs() < 1e-9 && exy.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sinusoid_peak_strain_analytic() {
        let field = AnalyticField::Sinusoid { amplitude: 0.5, period: 50.0, axis: Axis::X };
        let kappa = 2.0 * std::f64::consts::PI * 0.5 / 50.0;
        let want = 0.5 * (2.0 * kappa + kappa * kappa);
        // peak of du/dx sits where cos = 1, i.e. x = 0 mod lambda
        let (exx, _, _) = field.green_lagrange(Point::new(50.0, 10.0));
        assert!((exx - want).abs() < 1e-12, "{exx} vs {want}");
        assert!((want - 0.0648).abs() < 5e-4);
        // max |u| equals the amplitude at quarter period
        let (u, _) = field.displacement(Point::new(12.5, 0.0));
        assert!((u - 0.5).abs() < 1e-12);
    }

    #[test]
    fn truth_is_exact_closed_form_at_grid_points() {
        let field = AnalyticField::Sinusoid { amplitude: 0.5, period: 50.0, axis: Axis::X };
        let truth = field.sample_grid(100, 40);
        for &(x, y) in &[(0usize, 0usize), (13, 17), (99, 39)] {
            let (u, v) = truth.get(x, y).unwrap();
            let (eu, ev) = field.displacement(Point::new(x as f64, y as f64));
            assert_eq!(u, eu);
            assert_eq!(v, ev);
        }
    }

    #[test]
    fn inversion_round_trip_under_1e6() {
        let field = AnalyticField::Sinusoid { amplitude: 0.5, period: 50.0, axis: Axis::X };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let p = Point::new(rng.random_range(0.0..200.0), rng.random_range(0.0..100.0));
            let (u, v) = field.displacement(p);
            let fwd = Point::new(p.x + u, p.y + v);
            let back = invert_at(&field, fwd).unwrap();
            let err = ((back.x - p.x).powi(2) + (back.y - p.y).powi(2)).sqrt();
            assert!(err < 1e-6, "round trip error {err}");
        }
    }

    #[test]
    fn self_consistency_of_backward_warp() {
        // resampling the deformed frame at X + u(X) recovers the reference;
        // a smooth textured image keeps the residual at the level of the
        // interpolation error itself
        let base = GrayImage::from_fn(96, 72, |x, y| {
            0.5 + 0.22 * (x as f64 * 0.37).sin() * (y as f64 * 0.31).cos()
                + 0.18 * (x as f64 * 0.19 + y as f64 * 0.23).sin()
        })
        .unwrap();
        let field = AnalyticField::Sinusoid { amplitude: 0.5, period: 40.0, axis: Axis::X };
        let pair = generate_pair(&base, &field, 0.0, 7).unwrap();
        let spline = CubicSpline::new(&pair.deformed);
        let mut acc = 0.0;
        let mut n = 0;
        for y in 0..72 {
            for x in 8..88 {
                let (u, v) = pair.truth.get(x, y).unwrap();
                let p = Point::new(x as f64 + u, y as f64 + v);
                if !spline.contains(p) {
                    continue;
                }
                let d = spline.value(p).unwrap() - pair.reference.get(x, y);
                acc += d * d;
                n += 1;
            }
        }
        let rms = (acc / n as f64).sqrt();
        assert!(rms < 1e-3, "round-trip RMS {rms}");
    }

    #[test]
    fn folding_field_is_rejected() {
        let field = AnalyticField::Sinusoid { amplitude: 10.0, period: 20.0, axis: Axis::X };
        let base = generate_speckle(32, 32, SpeckleParams::default(), 1).unwrap();
        assert!(generate_pair(&base, &field, 0.0, 0).is_err());
    }

    #[test]
    fn scaled_field_interpolates_parameters() {
        let field = AnalyticField::Affine { f: [[1.3, 0.0], [0.0, 1.0]], offset: (2.0, 0.0) };
        let half = field.scaled(0.5);
        match half {
            AnalyticField::Affine { f, offset } => {
                assert!((f[0][0] - 1.15).abs() < 1e-15);
                assert!((offset.0 - 1.0).abs() < 1e-15);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn sequence_frames_and_truths_line_up() {
        let base = generate_speckle(48, 48, SpeckleParams::default(), 3).unwrap();
        let field = AnalyticField::Translation { tx: 2.0, ty: 0.0 };
        let seq = generate_sequence(&base, &field, 5, 0.0, 1).unwrap();
        assert_eq!(seq.frames.len(), 5);
        assert_eq!(seq.truths.len(), 4);
        // frame 0 is the unwarped base (sigma = 0)
        assert_eq!(seq.frames[0].pixels(), base.pixels());
        // cumulative truth at final frame equals the full translation
        let (u, v) = seq.truths[3].get(10, 10).unwrap();
        assert!((u - 2.0).abs() < 1e-12 && v.abs() < 1e-12);
        // and halfway, half of it
        let (u, _) = seq.truths[1].get(10, 10).unwrap();
        assert!((u - 1.0).abs() < 1e-12);
    }
}
