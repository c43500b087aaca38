//! Prefiltered cubic B-spline image interpolant.
//!
//! Direct use of pixel values as B-spline coefficients smooths the image;
//! interpolation (reproducing the samples at integer coordinates) requires
//! solving the inverse convolution with the sampled basis. That inverse is a
//! stable recursive filter with the single pole z = sqrt(3) - 2 and gain 6,
//! applied causally and anti-causally along each row and column with mirror
//! boundary conditions.

use crate::error::Result;
use crate::image::{GrayImage, Point};

/// Pole of the cubic B-spline direct filter.
const POLE: f64 = -0.267_949_192_431_122_7; // sqrt(3) - 2
/// Product (1 - z)(1 - 1/z) over the pole set.
const GAIN: f64 = 6.0;

/// Cubic B-spline basis weights for the 4-point support at fractional
/// position `u` in `[0, 1]`: index m covers node `floor(s) - 1 + m`.
#[inline]
pub(crate) fn bspline_weights(u: f64) -> [f64; 4] {
    let v = 1.0 - u;
    [
        v * v * v / 6.0,
        (4.0 - 6.0 * u * u + 3.0 * u * u * u) / 6.0,
        (4.0 - 6.0 * v * v + 3.0 * v * v * v) / 6.0,
        u * u * u / 6.0,
    ]
}

/// Derivatives of [`bspline_weights`] with respect to `u`.
#[inline]
pub(crate) fn bspline_weight_derivs(u: f64) -> [f64; 4] {
    let v = 1.0 - u;
    [
        -v * v / 2.0,
        (-12.0 * u + 9.0 * u * u) / 6.0,
        (12.0 * v - 9.0 * v * v) / 6.0,
        u * u / 2.0,
    ]
}

/// Mirror index into `[0, n-1]` with whole-sample symmetry (period 2n-2).
#[inline]
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
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
}

fn initial_causal(line: &[f64], z: f64) -> f64 {
    let n = line.len();
    let horizon = (f64::EPSILON.ln() / z.abs().ln()).ceil() as usize;
    if horizon < n {
        let mut zi = z;
        let mut sum = line[0];
        for v in &line[1..horizon] {
            sum += zi * v;
            zi *= z;
        }
        sum
    } else {
        let mut zi = z;
        let iz = 1.0 / z;
        let zn1 = z.powi(n as i32 - 1);
        let mut z2i = zn1 * zn1 * iz;
        let mut sum = line[0] + zn1 * line[n - 1];
        for v in &line[1..n - 1] {
            sum += (zi + z2i) * v;
            zi *= z;
            z2i *= iz;
        }
        sum / (1.0 - zn1 * zn1)
    }
}

fn initial_anticausal(line: &[f64], z: f64) -> f64 {
    let n = line.len();
    (z / (z * z - 1.0)) * (z * line[n - 2] + line[n - 1])
}

/// In-place interpolation prefilter along one line.
fn prefilter_line(line: &mut [f64]) {
    let n = line.len();
    if n == 1 {
        return;
    }
    for v in line.iter_mut() {
        *v *= GAIN;
    }
    line[0] = initial_causal(line, POLE);
    for i in 1..n {
        line[i] += POLE * line[i - 1];
    }
    line[n - 1] = initial_anticausal(line, POLE);
    for i in (0..n - 1).rev() {
        line[i] = POLE * (line[i + 1] - line[i]);
    }
}

/// Prefiltered cubic B-spline interpolant of a [`GrayImage`].
///
/// Construction runs the recursive prefilter over all rows and columns;
/// queries are then 4x4 weighted sums. The interpolant is defined on the
/// image domain `[0, width-1] x [0, height-1]`; support samples outside the
/// grid use mirror extension of the coefficients.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    width: usize,
    height: usize,
    coeffs: Vec<f64>,
}

impl CubicSpline {
    pub fn new(image: &GrayImage) -> Self {
        let (w, h) = (image.width(), image.height());
        let mut coeffs = image.pixels().to_vec();
        for row in coeffs.chunks_mut(w) {
            prefilter_line(row);
        }
        let mut col = vec![0.0; h];
        for x in 0..w {
            for y in 0..h {
                col[y] = coeffs[y * w + x];
            }
            prefilter_line(&mut col);
            for y in 0..h {
                coeffs[y * w + x] = col[y];
            }
        }
        CubicSpline { width: w, height: h, coeffs }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0
            && p.y >= 0.0
            && p.x <= (self.width - 1) as f64
            && p.y <= (self.height - 1) as f64
    }

    #[inline]
    fn coeff(&self, x: isize, y: isize) -> f64 {
        let xi = mirror(x, self.width);
        let yi = mirror(y, self.height);
        self.coeffs[yi * self.width + xi]
    }

    fn support(&self, p: Point) -> (isize, isize, f64, f64) {
        let ix = p.x.floor() as isize;
        let iy = p.y.floor() as isize;
        (ix, iy, p.x - ix as f64, p.y - iy as f64)
    }

    /// Interpolated intensity at `p`.
    pub fn value(&self, p: Point) -> Result<f64> {
        if !self.contains(p) {
            return Err(crate::error::Error::OutOfBounds {
                x: p.x,
                y: p.y,
                max_x: (self.width - 1) as f64,
                max_y: (self.height - 1) as f64,
            });
        }
        let (ix, iy, ux, uy) = self.support(p);
        let wx = bspline_weights(ux);
        let wy = bspline_weights(uy);
        let mut acc = 0.0;
        for (m, wym) in wy.iter().enumerate() {
            let row_y = iy - 1 + m as isize;
            let mut row = 0.0;
            for (k, wxk) in wx.iter().enumerate() {
                row += wxk * self.coeff(ix - 1 + k as isize, row_y);
            }
            acc += wym * row;
        }
        Ok(acc)
    }

    /// Intensity and its spatial gradient at `p`.
    pub fn value_and_gradient(&self, p: Point) -> Result<(f64, f64, f64)> {
        if !self.contains(p) {
            return Err(crate::error::Error::OutOfBounds {
                x: p.x,
                y: p.y,
                max_x: (self.width - 1) as f64,
                max_y: (self.height - 1) as f64,
            });
        }
        let (ix, iy, ux, uy) = self.support(p);
        let wx = bspline_weights(ux);
        let wy = bspline_weights(uy);
        let dx = bspline_weight_derivs(ux);
        let dy = bspline_weight_derivs(uy);
        let (mut v, mut gx, mut gy) = (0.0, 0.0, 0.0);
        for m in 0..4 {
            let row_y = iy - 1 + m as isize;
            let (mut row_v, mut row_d) = (0.0, 0.0);
            for k in 0..4 {
                let c = self.coeff(ix - 1 + k as isize, row_y);
                row_v += wx[k] * c;
                row_d += dx[k] * c;
            }
            v += wy[m] * row_v;
            gx += wy[m] * row_d;
            gy += dy[m] * row_v;
        }
        Ok((v, gx, gy))
    }
}
