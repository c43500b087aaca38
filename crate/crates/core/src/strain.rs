//! Green-Lagrange strain fields from dense displacement fields.

use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{parse_field_csv, DisplacementField};

/// Schema tag of strain CSVs.
pub const STRAIN_SCHEMA: &str = "# warpfield field schema=strain units=1";

/// Per-pixel Green-Lagrange strain components on the undeformed grid.
/// E_xy is stored once (the tensor is symmetric). Invalid pixels store
/// zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct StrainField {
    width: usize,
    height: usize,
    pub exx: Vec<f64>,
    pub eyy: Vec<f64>,
    pub exy: Vec<f64>,
    pub valid: Vec<bool>,
}

impl StrainField {
    /// All-invalid field of the given dimensions.
    pub fn empty(width: usize, height: usize) -> Self {
        StrainField {
            width,
            height,
            exx: vec![0.0; width * height],
            eyy: vec![0.0; width * height],
            exy: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<(f64, f64, f64)> {
        let i = y * self.width + x;
        self.valid[i].then(|| (self.exx[i], self.eyy[i], self.exy[i]))
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Mean of each component over valid pixels.
    pub fn mean_components(&self) -> Option<(f64, f64, f64)> {
        let n = self.valid_count();
        if n == 0 {
            return None;
        }
        let mut sums = (0.0, 0.0, 0.0);
        for i in 0..self.valid.len() {
            if self.valid[i] {
                sums.0 += self.exx[i];
                sums.1 += self.eyy[i];
                sums.2 += self.exy[i];
            }
        }
        let n = n as f64;
        Some((sums.0 / n, sums.1 / n, sums.2 / n))
    }

    /// Largest absolute component value over valid pixels.
    pub fn max_abs_component(&self) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.valid.len() {
            if self.valid[i] {
                m = m.max(self.exx[i].abs()).max(self.eyy[i].abs()).max(self.exy[i].abs());
            }
        }
        m
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.exx.len() * 20);
        s.push_str(STRAIN_SCHEMA);
        s.push('\n');
        s.push_str("x,y,Exx,Eyy,Exy,valid\n");
        for y in 0..self.height {
            for x in 0..self.width {
                let i = y * self.width + x;
                s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    x,
                    y,
                    self.exx[i],
                    self.eyy[i],
                    self.exy[i],
                    u8::from(self.valid[i])
                ));
            }
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        parse_field_csv(text, path, STRAIN_SCHEMA, "x,y,Exx,Eyy,Exy,valid").map(
            |(w, h, cols, valid)| {
                let mut it = cols.into_iter();
                StrainField {
                    width: w,
                    height: h,
                    exx: it.next().unwrap(),
                    eyy: it.next().unwrap(),
                    exy: it.next().unwrap(),
                    valid,
                }
            },
        )
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_csv(&text, path.as_ref())
    }
}

/// Displacement gradients by finite differences: second-order central in
/// the interior, second-order one-sided on boundary rows and columns.
/// Returns None when a required neighbor is invalid.
fn axis_gradient(
    vals: &[f64],
    valid: &[bool],
    stride: usize,
    i: usize,
    pos: usize,
    len: usize,
    h: f64,
) -> Option<f64> {
    let at = |k: usize| -> Option<f64> {
        let j = i + (k - pos) * stride;
        valid[j].then(|| vals[j])
    };
    let at_back = |k: usize| -> Option<f64> {
        let j = i - (pos - k) * stride;
        valid[j].then(|| vals[j])
    };
    if pos == 0 {
        // forward one-sided: (-3 f0 + 4 f1 - f2) / 2h
        Some((-3.0 * at(0)? + 4.0 * at(1)? - at(2)?) / (2.0 * h))
    } else if pos == len - 1 {
        // backward one-sided
        Some((3.0 * at_back(pos)? - 4.0 * at_back(pos - 1)? + at_back(pos - 2)?) / (2.0 * h))
    } else {
        Some((at(pos + 1)? - at_back(pos - 1)?) / (2.0 * h))
    }
}

/// Green-Lagrange strain of a displacement field.
///
/// Gradients use central differences in the interior and second-order
/// one-sided stencils on the outermost rows/columns, divided by the pixel
/// spacing; the tensor components then follow pointwise:
/// E_xx = (2 du/dx + (du/dx)^2 + (dv/dx)^2) / 2, E_yy analogous, and
/// E_xy = (du/dy + dv/dx + du/dx du/dy + dv/dx dv/dy) / 2.
/// Pixels whose stencil touches an invalid neighbor are marked invalid.
pub fn green_lagrange_strain(
    field: &DisplacementField,
    pixel_spacing: (f64, f64),
) -> Result<StrainField> {
    let (w, h) = (field.width(), field.height());
    if w < 3 || h < 3 {
        return Err(Error::Parameter(format!(
            "strain needs a field of at least 3x3 pixels, got {w}x{h}"
        )));
    }
    let (hx, hy) = pixel_spacing;
    if !(hx > 0.0 && hy > 0.0) {
        return Err(Error::Parameter(format!(
            "pixel spacing must be positive, got ({hx}, {hy})"
        )));
    }

    let mut out = StrainField {
        width: w,
        height: h,
        exx: vec![0.0; w * h],
        eyy: vec![0.0; w * h],
        exy: vec![0.0; w * h],
        valid: vec![false; w * h],
    };

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !field.valid[i] {
                continue;
            }
            let grads = (|| {
                let ux = axis_gradient(&field.u, &field.valid, 1, i, x, w, hx)?;
                let vx = axis_gradient(&field.v, &field.valid, 1, i, x, w, hx)?;
                let uy = axis_gradient(&field.u, &field.valid, w, i, y, h, hy)?;
                let vy = axis_gradient(&field.v, &field.valid, w, i, y, h, hy)?;
                Some((ux, uy, vx, vy))
            })();
            let Some((ux, uy, vx, vy)) = grads else {
                continue;
            };
            out.exx[i] = 0.5 * (2.0 * ux + ux * ux + vx * vx);
            out.eyy[i] = 0.5 * (2.0 * vy + uy * uy + vy * vy);
            out.exy[i] = 0.5 * (uy + vx + ux * uy + vx * vy);
            out.valid[i] = true;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn analytic_field(
        w: usize,
        h: usize,
        f: impl Fn(f64, f64) -> (f64, f64),
    ) -> DisplacementField {
        let mut out = DisplacementField::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                let (u, v) = f(x as f64, y as f64);
                out.set(x, y, u, v);
            }
        }
        out
    }

    #[test]
    fn zero_field_zero_strain() {
        let f = DisplacementField::zeros(8, 8);
        let s = green_lagrange_strain(&f, (1.0, 1.0)).unwrap();
        assert_eq!(s.valid_count(), 64);
        assert_eq!(s.max_abs_component(), 0.0);
    }

    #[test]
    fn uniaxial_stretch_matches_closed_form() {
        // u = 0.1 x: E_xx = (0.2 + 0.01)/2 = 0.105 exactly, everywhere.
        let f = analytic_field(12, 9, |x, _| (0.1 * x, 0.0));
        let s = green_lagrange_strain(&f, (1.0, 1.0)).unwrap();
        for y in 0..9 {
            for x in 0..12 {
                let (exx, eyy, exy) = s.get(x, y).unwrap();
                assert!((exx - 0.105).abs() < 1e-12, "({x},{y}): {exx}");
                assert!(eyy.abs() < 1e-12);
                assert!(exy.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rigid_rotation_gives_null_strain() {
        let theta = 5f64.to_radians();
        let (c, s) = (theta.cos(), theta.sin());
        let f = analytic_field(16, 16, |x, y| {
            ((c - 1.0) * x - s * y + 3.0, s * x + (c - 1.0) * y - 7.0)
        });
        let out = green_lagrange_strain(&f, (1.0, 1.0)).unwrap();
        assert!(out.max_abs_component() < 1e-10, "{}", out.max_abs_component());

        // also at a large angle
        let theta = 30f64.to_radians();
        let (c, s) = (theta.cos(), theta.sin());
        let f = analytic_field(16, 16, |x, y| {
            ((c - 1.0) * x - s * y, s * x + (c - 1.0) * y)
        });
        let out = green_lagrange_strain(&f, (1.0, 1.0)).unwrap();
        assert!(out.max_abs_component() < 1e-9);
    }

    #[test]
    fn affine_fields_give_constant_closed_form_strain() {
        // u = a x + b y, v = c x + d y: F = I + grad, E = (F^T F - I)/2
        let (a, b, c, d) = (0.03, -0.02, 0.015, 0.05);
        let f = analytic_field(10, 10, |x, y| (a * x + b * y, c * x + d * y));
        let s = green_lagrange_strain(&f, (1.0, 1.0)).unwrap();
        let exx = 0.5 * (2.0 * a + a * a + c * c);
        let eyy = 0.5 * (2.0 * d + b * b + d * d);
        let exy = 0.5 * (b + c + a * b + c * d);
        for y in 0..10 {
            for x in 0..10 {
                let (gx, gy, gxy) = s.get(x, y).unwrap();
                assert!((gx - exx).abs() < 1e-10);
                assert!((gy - eyy).abs() < 1e-10);
                assert!((gxy - exy).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn small_strain_matches_infinitesimal() {
        let f = analytic_field(10, 10, |x, _| (1e-3 * x, 0.0));
        let s = green_lagrange_strain(&f, (1.0, 1.0)).unwrap();
        let (exx, _, _) = s.get(5, 5).unwrap();
        assert!((exx - 1e-3).abs() < 1e-6);
    }

    #[test]
    fn pixel_spacing_scales_gradients() {
        // same displacement samples on a grid twice as coarse: halved slope
        let f = analytic_field(10, 10, |x, _| (0.1 * x, 0.0));
        let s = green_lagrange_strain(&f, (2.0, 2.0)).unwrap();
        let slope: f64 = 0.05;
        let want = 0.5 * (2.0 * slope + slope * slope);
        let (exx, _, _) = s.get(4, 4).unwrap();
        assert!((exx - want).abs() < 1e-12);
    }

    #[test]
    fn second_order_convergence_on_sinusoid() {
        // max E_xx error drops by at least 3.5x when sampling doubles
        let lambda = 40.0;
        let amp = 0.5;
        let k = 2.0 * std::f64::consts::PI / lambda;
        let run = |step: f64| -> f64 {
            let n = (80.0 / step) as usize + 1;
            let mut f = DisplacementField::zeros(n, 5);
            for y in 0..5 {
                for x in 0..n {
                    f.set(x, y, amp * (k * x as f64 * step).sin(), 0.0);
                }
            }
            let s = green_lagrange_strain(&f, (step, step)).unwrap();
            let mut max_err = 0.0f64;
            for x in 1..n - 1 {
                let ux = amp * k * (k * x as f64 * step).cos();
                let want = 0.5 * (2.0 * ux + ux * ux);
                let (exx, _, _) = s.get(x, 2).unwrap();
                max_err = max_err.max((exx - want).abs());
            }
            max_err
        };
        let coarse = run(2.0);
        let fine = run(1.0);
        assert!(
            coarse / fine >= 3.5,
            "convergence ratio {} (coarse {coarse}, fine {fine})",
            coarse / fine
        );
    }

    #[test]
    fn too_small_field_is_rejected() {
        let f = DisplacementField::zeros(2, 5);
        assert!(green_lagrange_strain(&f, (1.0, 1.0)).is_err());
    }

    #[test]
    fn invalid_neighbors_invalidate_pixel_without_error() {
        let mut f = analytic_field(8, 8, |x, _| (0.1 * x, 0.0));
        f.invalidate(4, 4);
        let s = green_lagrange_strain(&f, (1.0, 1.0)).unwrap();
        assert!(s.get(4, 4).is_none());
        assert!(s.get(3, 4).is_none()); // central stencil hits the hole
        assert!(s.get(5, 4).is_none());
        assert!(s.get(4, 3).is_none());
        assert!(s.get(2, 4).is_some()); // two away: stencil intact
        assert!(s.get(3, 3).is_some());
    }

    #[test]
    fn strain_csv_round_trip() {
        let f = analytic_field(5, 4, |x, y| (0.01 * x * y, -0.02 * x));
        let mut s = green_lagrange_strain(&f, (1.0, 1.0)).unwrap();
        s.valid[7] = false;
        s.exx[7] = 0.0;
        s.eyy[7] = 0.0;
        s.exy[7] = 0.0;
        let text = s.to_csv();
        let back = StrainField::from_csv(&text, Path::new("mem")).unwrap();
        assert_eq!(s, back);
    }
}
