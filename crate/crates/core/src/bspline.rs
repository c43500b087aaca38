//! Cubic B-spline free-form deformation.
//!
//! A regular grid of control points carries 2-vector coefficients that
//! parameterize a displacement field: T(x) = x + sum over the 4x4 support of
//! coefficient * tensor-product cubic B-spline weight. The coefficients are
//! the optimization parameters; zero coefficients give the identity.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::spline::{bspline_weight_derivs, bspline_weights};
use crate::image::Point;

/// Number of control points in the 4x4 evaluation support.
pub const SUPPORT: usize = 16;

/// Tensor-product weights of the control points supporting one point.
///
/// `base` is the grid index of the top-left control point of the 4x4
/// stencil; `weights[j * 4 + i]` belongs to control point
/// `(base.0 + i, base.1 + j)`. The weights sum to one and apply identically
/// to both displacement components.
#[derive(Debug, Clone)]
pub struct SupportWeights {
    pub base: (usize, usize),
    pub weights: [f64; SUPPORT],
}

impl SupportWeights {
    /// Linear control-point index of stencil entry `k` for a grid `nx` wide.
    #[inline]
    pub fn grid_index(&self, k: usize, nx: usize) -> usize {
        let (i, j) = (k % 4, k / 4);
        (self.base.1 + j) * nx + self.base.0 + i
    }
}

/// Free-form deformation on a regular control-point grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineTransform {
    origin: Point,
    spacing: (f64, f64),
    dims: (usize, usize),
    /// Interleaved (cx, cy) per control point, row-major over the grid.
    coeffs: Vec<f64>,
}

impl BSplineTransform {
    /// Identity transform whose grid covers `domain` (width, height in
    /// pixels) at the given control-point spacing, with one spare control
    /// point beyond the minimum support margin on each side.
    pub fn new(domain: (usize, usize), spacing: (f64, f64)) -> Result<Self> {
        let (w, h) = domain;
        if !(spacing.0 > 0.0 && spacing.1 > 0.0)
            || !spacing.0.is_finite()
            || !spacing.1.is_finite()
        {
            return Err(Error::Parameter(format!(
                "control-point spacing must be positive, got ({}, {})",
                spacing.0, spacing.1
            )));
        }
        if w < 8 || h < 8 {
            return Err(Error::Parameter(format!(
                "registration domain must be at least 8x8, got {w}x{h}"
            )));
        }
        // Support of a point at grid coordinate s spans floor(s)-1 ..
        // floor(s)+2. Origin two spacings left of the domain keeps one spare
        // node outside the minimum margin; same on the far side.
        let origin = Point::new(-2.0 * spacing.0, -2.0 * spacing.1);
        let nx = ((w - 1) as f64 / spacing.0).floor() as usize + 6;
        let ny = ((h - 1) as f64 / spacing.1).floor() as usize + 6;
        Ok(BSplineTransform {
            origin,
            spacing,
            dims: (nx, ny),
            coeffs: vec![0.0; 2 * nx * ny],
        })
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    pub fn spacing(&self) -> (f64, f64) {
        self.spacing
    }

    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }

    /// Interleaved coefficient storage, the optimization parameter vector.
    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn set_coefficients(&mut self, coeffs: &[f64]) -> Result<()> {
        if coeffs.len() != self.coeffs.len() {
            return Err(Error::Parameter(format!(
                "coefficient vector has {} entries, expected {}",
                coeffs.len(),
                self.coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Parameter("non-finite coefficient".into()));
        }
        self.coeffs.copy_from_slice(coeffs);
        Ok(())
    }

    /// Set the coefficient vector of one control point.
    pub fn set_control_point(&mut self, ix: usize, iy: usize, c: (f64, f64)) {
        let idx = 2 * (iy * self.dims.0 + ix);
        self.coeffs[idx] = c.0;
        self.coeffs[idx + 1] = c.1;
    }

    /// Position of control point (ix, iy).
    pub fn control_point_position(&self, ix: usize, iy: usize) -> Point {
        Point::new(
            self.origin.x + ix as f64 * self.spacing.0,
            self.origin.y + iy as f64 * self.spacing.1,
        )
    }

    /// The rectangle of points whose full 4x4 support lies inside the grid.
    /// Slightly larger than the registered image domain.
    pub fn covered_bounds(&self) -> (f64, f64, f64, f64) {
        let x_min = self.origin.x + self.spacing.0;
        let x_max = self.origin.x + (self.dims.0 as f64 - 3.0) * self.spacing.0;
        let y_min = self.origin.y + self.spacing.1;
        let y_max = self.origin.y + (self.dims.1 as f64 - 3.0) * self.spacing.1;
        (x_min, x_max, y_min, y_max)
    }

    #[inline]
    pub fn covers(&self, p: Point) -> bool {
        let (x0, x1, y0, y1) = self.covered_bounds();
        p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1
    }

    fn coverage_error(&self, p: Point) -> Error {
        let (x0, x1, y0, y1) = self.covered_bounds();
        Error::OutOfBounds { x: p.x - x0, y: p.y - y0, max_x: x1 - x0, max_y: y1 - y0 }
    }

    /// The 16 support weights at `p` (partition of unity).
    pub fn support_weights(&self, p: Point) -> Result<SupportWeights> {
        if !self.covers(p) {
            return Err(self.coverage_error(p));
        }
        let sx = (p.x - self.origin.x) / self.spacing.0;
        let sy = (p.y - self.origin.y) / self.spacing.1;
        // At the far covered edge floor(s) needs pulling back one cell so
        // the stencil stays inside; the fraction then evaluates at u = 1.
        let ix = (sx.floor() as usize).min(self.dims.0 - 3);
        let iy = (sy.floor() as usize).min(self.dims.1 - 3);
        let wx = bspline_weights(sx - ix as f64);
        let wy = bspline_weights(sy - iy as f64);
        let mut weights = [0.0; SUPPORT];
        for j in 0..4 {
            for i in 0..4 {
                weights[j * 4 + i] = wx[i] * wy[j];
            }
        }
        Ok(SupportWeights { base: (ix - 1, iy - 1), weights })
    }

    /// Displacement (u, v) at `p`.
    pub fn displacement(&self, p: Point) -> Result<(f64, f64)> {
        let sw = self.support_weights(p)?;
        let (mut u, mut v) = (0.0, 0.0);
        for (k, w) in sw.weights.iter().enumerate() {
            let idx = 2 * sw.grid_index(k, self.dims.0);
            u += w * self.coeffs[idx];
            v += w * self.coeffs[idx + 1];
        }
        Ok((u, v))
    }

    /// Mapped position T(p) = p + displacement(p).
    pub fn transform_point(&self, p: Point) -> Result<Point> {
        let (u, v) = self.displacement(p)?;
        Ok(Point::new(p.x + u, p.y + v))
    }

    /// Derivative of the mapped position with respect to the coefficients:
    /// the support weights, shared by both displacement components.
    pub fn parameter_jacobian(&self, p: Point) -> Result<SupportWeights> {
        self.support_weights(p)
    }

    /// Spatial derivative of the displacement field at `p`:
    /// (du/dx, du/dy, dv/dx, dv/dy).
    pub fn displacement_gradient(&self, p: Point) -> Result<(f64, f64, f64, f64)> {
        if !self.covers(p) {
            return Err(self.coverage_error(p));
        }
        let sx = (p.x - self.origin.x) / self.spacing.0;
        let sy = (p.y - self.origin.y) / self.spacing.1;
        let ix = (sx.floor() as usize).min(self.dims.0 - 3);
        let iy = (sy.floor() as usize).min(self.dims.1 - 3);
        let wx = bspline_weights(sx - ix as f64);
        let wy = bspline_weights(sy - iy as f64);
        let dx = bspline_weight_derivs(sx - ix as f64);
        let dy = bspline_weight_derivs(sy - iy as f64);
        let (mut ux, mut uy, mut vx, mut vy) = (0.0, 0.0, 0.0, 0.0);
        for j in 0..4 {
            for i in 0..4 {
                let gx = (iy - 1 + j) * self.dims.0 + ix - 1 + i;
                let (cu, cv) = (self.coeffs[2 * gx], self.coeffs[2 * gx + 1]);
                let wxd = dx[i] / self.spacing.0 * wy[j];
                let wyd = wx[i] * dy[j] / self.spacing.1;
                ux += cu * wxd;
                uy += cu * wyd;
                vx += cv * wxd;
                vy += cv * wyd;
            }
        }
        Ok((ux, uy, vx, vy))
    }

    /// Serialize to the plain-text transform format (lossless round trip).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "warpfield bspline transform v1");
        let _ = writeln!(s, "origin {} {}", self.origin.x, self.origin.y);
        let _ = writeln!(s, "spacing {} {}", self.spacing.0, self.spacing.1);
        let _ = writeln!(s, "dims {} {}", self.dims.0, self.dims.1);
        for c in self.coeffs.chunks(2) {
            let _ = writeln!(s, "{} {}", c[0], c[1]);
        }
        s
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut offset = 0usize;
        let fail = |offset: usize, reason: String| Error::Format {
            path: path.to_path_buf(),
            offset,
            reason,
        };
        let mut lines = text.lines();
        let mut next_line = |offset: &mut usize| -> Option<&str> {
            let l = lines.next()?;
            let start = *offset;
            *offset += l.len() + 1;
            let _ = start;
            Some(l)
        };

        let header = next_line(&mut offset)
            .ok_or_else(|| fail(0, "empty transform file".into()))?;
        if header.trim() != "warpfield bspline transform v1" {
            return Err(fail(0, format!("unrecognized header {header:?}")));
        }
        let mut parse_pair = |key: &str, offset: &mut usize| -> Result<(f64, f64)> {
            let at = *offset;
            let line = next_line(offset).ok_or_else(|| fail(at, format!("missing {key} line")))?;
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(fail(at, format!("expected {key} line, got {line:?}")));
            }
            let a = it
                .next()
                .and_then(|t| t.parse::<f64>().ok())
                .ok_or_else(|| fail(at, format!("bad {key} values")))?;
            let b = it
                .next()
                .and_then(|t| t.parse::<f64>().ok())
                .ok_or_else(|| fail(at, format!("bad {key} values")))?;
            Ok((a, b))
        };
        let origin = parse_pair("origin", &mut offset)?;
        let spacing = parse_pair("spacing", &mut offset)?;
        let dims = parse_pair("dims", &mut offset)?;
        let (nx, ny) = (dims.0 as usize, dims.1 as usize);
        if nx < 4 || ny < 4 {
            return Err(fail(offset, format!("grid {nx}x{ny} below 4x4 minimum")));
        }
        let mut coeffs = Vec::with_capacity(2 * nx * ny);
        for _ in 0..nx * ny {
            let at = offset;
            let line =
                next_line(&mut offset).ok_or_else(|| fail(at, "missing coefficient row".into()))?;
            let mut it = line.split_whitespace();
            for _ in 0..2 {
                let v = it
                    .next()
                    .and_then(|t| t.parse::<f64>().ok())
                    .ok_or_else(|| fail(at, format!("bad coefficient row {line:?}")))?;
                if !v.is_finite() {
                    return Err(fail(at, "non-finite coefficient".into()));
                }
                coeffs.push(v);
            }
        }
        Ok(BSplineTransform {
            origin: Point::new(origin.0, origin.1),
            spacing,
            dims: (nx, ny),
            coeffs,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_text(&text, path.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_non_positive_spacing() {
        assert!(BSplineTransform::new((300, 300), (0.0, 30.0)).is_err());
        assert!(BSplineTransform::new((300, 300), (30.0, -1.0)).is_err());
    }

    #[test]
    fn grid_covers_domain_with_spare_node() {
        // Independent re-derivation of the coverage arithmetic: every domain
        // point needs its 4x4 stencil inside the grid, plus one spare node on
        // each side.
        for &(w, h, sx, sy) in &[
            (300usize, 300usize, 30.0, 30.0),
            (500, 250, 15.0, 15.0),
            (100, 80, 128.0, 64.0),
            (211, 97, 13.7, 29.3),
        ] {
            let t = BSplineTransform::new((w, h), (sx, sy)).unwrap();
            let (nx, ny) = t.dims();
            assert!(nx >= 4 && ny >= 4);
            for &(px, py) in &[
                (0.0, 0.0),
                ((w - 1) as f64, (h - 1) as f64),
                (0.0, (h - 1) as f64),
                ((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0),
            ] {
                let s = t.support_weights(Point::new(px, py)).unwrap();
                // stencil inside grid with one spare node on each side
                assert!(s.base.0 >= 1, "({w},{h},{sx},{sy}) at x={px}");
                assert!(s.base.1 >= 1);
                assert!(s.base.0 + 3 <= nx - 2);
                assert!(s.base.1 + 3 <= ny - 2);
            }
        }
        // the spec's 300x300 @ 30 example: at least 14 nodes per axis
        let t = BSplineTransform::new((300, 300), (30.0, 30.0)).unwrap();
        assert!(t.dims().0 >= 14 && t.dims().1 >= 14);
    }

    #[test]
    fn zero_coefficients_is_identity() {
        let t = BSplineTransform::new((64, 48), (10.0, 10.0)).unwrap();
        for &(x, y) in &[(0.0, 0.0), (63.0, 47.0), (17.3, 29.9), (40.0, 8.5)] {
            let q = t.transform_point(Point::new(x, y)).unwrap();
            assert_eq!((q.x, q.y), (x, y));
        }
    }

    #[test]
    fn constant_coefficients_shift_uniformly() {
        let mut t = BSplineTransform::new((64, 48), (12.0, 9.0)).unwrap();
        for i in 0..t.dims().0 * t.dims().1 {
            t.coeffs[2 * i] = 2.0;
            t.coeffs[2 * i + 1] = -0.5;
        }
        for &(x, y) in &[(0.0, 0.0), (63.0, 47.0), (31.7, 23.1)] {
            let (u, v) = t.displacement(Point::new(x, y)).unwrap();
            assert!((u - 2.0).abs() < 1e-12, "u = {u}");
            assert!((v + 0.5).abs() < 1e-12, "v = {v}");
        }
    }

    #[test]
    fn single_node_weight_at_its_position() {
        // Center weight of the tensor basis is (2/3)^2 = 4/9.
        let mut t = BSplineTransform::new((60, 60), (10.0, 10.0)).unwrap();
        let (ix, iy) = (4, 4);
        t.set_control_point(ix, iy, (1.0, 0.0));
        let p = t.control_point_position(ix, iy);
        assert!(t.covers(p));
        let (u, v) = t.displacement(p).unwrap();
        assert!((u - 4.0 / 9.0).abs() < 1e-12, "u = {u}");
        assert_eq!(v, 0.0);
    }

    #[test]
    fn weights_sum_to_one_everywhere() {
        let t = BSplineTransform::new((100, 70), (11.0, 7.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let p = Point::new(rng.random_range(0.0..99.0), rng.random_range(0.0..69.0));
            let s = t.support_weights(p).unwrap();
            let sum: f64 = s.weights.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut t = BSplineTransform::new((80, 60), (9.0, 13.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for c in t.coeffs.iter_mut() {
            *c = rng.random_range(-1.0..1.0);
        }
        let eps = 1e-6;
        for _ in 0..100 {
            let p = Point::new(rng.random_range(0.0..79.0), rng.random_range(0.0..59.0));
            let jac = t.parameter_jacobian(p).unwrap();
            for k in [0usize, 5, 9, 15] {
                let idx = 2 * jac.grid_index(k, t.dims().0);
                let mut tp = t.clone();
                tp.coeffs[idx] += eps;
                let mut tm = t.clone();
                tm.coeffs[idx] -= eps;
                let fd = (tp.transform_point(p).unwrap().x - tm.transform_point(p).unwrap().x)
                    / (2.0 * eps);
                assert!(
                    (fd - jac.weights[k]).abs() < 1e-8,
                    "weight {k}: analytic {} vs fd {fd}",
                    jac.weights[k]
                );
            }
        }
    }

    #[test]
    fn displacement_is_smooth_across_knots() {
        let mut t = BSplineTransform::new((100, 40), (10.0, 10.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for c in t.coeffs.iter_mut() {
            *c = rng.random_range(-2.0..2.0);
        }
        // march along a horizontal line crossing several knots
        let h = 0.125;
        let mut us = Vec::new();
        let mut x = 2.0;
        while x <= 95.0 {
            us.push(t.displacement(Point::new(x, 17.3)).unwrap().0);
            x += h;
        }
        let second_diffs: Vec<f64> = us.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).collect();
        // C2 continuity: successive second differences change smoothly
        for pair in second_diffs.windows(2) {
            assert!((pair[1] - pair[0]).abs() < 1e-3);
        }
    }

    #[test]
    fn displacement_gradient_matches_finite_differences() {
        let mut t = BSplineTransform::new((80, 80), (14.0, 11.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for c in t.coeffs.iter_mut() {
            *c = rng.random_range(-1.5..1.5);
        }
        let h = 1e-5;
        for _ in 0..50 {
            let p = Point::new(rng.random_range(1.0..78.0), rng.random_range(1.0..78.0));
            let (ux, uy, vx, vy) = t.displacement_gradient(p).unwrap();
            let xp = t.displacement(Point::new(p.x + h, p.y)).unwrap();
            let xm = t.displacement(Point::new(p.x - h, p.y)).unwrap();
            let yp = t.displacement(Point::new(p.x, p.y + h)).unwrap();
            let ym = t.displacement(Point::new(p.x, p.y - h)).unwrap();
            assert!((ux - (xp.0 - xm.0) / (2.0 * h)).abs() < 1e-7);
            assert!((vx - (xp.1 - xm.1) / (2.0 * h)).abs() < 1e-7);
            assert!((uy - (yp.0 - ym.0) / (2.0 * h)).abs() < 1e-7);
            assert!((vy - (yp.1 - ym.1) / (2.0 * h)).abs() < 1e-7);
        }
    }

    #[test]
    fn text_round_trip_is_lossless() {
        let mut t = BSplineTransform::new((33, 21), (7.3, 5.1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for c in t.coeffs.iter_mut() {
            *c = rng.random_range(-10.0..10.0) * 0.123456789123456789;
        }
        let text = t.to_text();
        let back = BSplineTransform::from_text(&text, Path::new("mem")).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn outside_coverage_errors() {
        let t = BSplineTransform::new((64, 64), (16.0, 16.0)).unwrap();
        let (x0, x1, _, _) = t.covered_bounds();
        assert!(t.transform_point(Point::new(x0 - 0.5, 10.0)).is_err());
        assert!(t.transform_point(Point::new(x1 + 0.5, 10.0)).is_err());
        // coverage extends a little beyond the image domain
        assert!(t.covers(Point::new(-1.0, -1.0)));
        assert!(t.covers(Point::new(63.5, 63.5)));
    }
}
