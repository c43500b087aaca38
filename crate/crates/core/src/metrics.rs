//! Intensity similarity metrics with analytic coefficient gradients.
//!
//! All three metrics are phrased as costs to minimize. Values and gradients
//! are estimated over a random sample of fixed-image positions; samples whose
//! mapped position leaves the moving image are dropped and counted, and an
//! evaluation with half or more of its samples invalid is an error the
//! optimizer must treat as an abort.

use crate::bspline::{BSplineTransform, SUPPORT};
use crate::error::{Error, Result};
use crate::image::spline::{bspline_weight_derivs, bspline_weights};
use crate::image::{CubicSpline, GrayImage, Point};
use crate::sample::SampleSet;

/// Joint-histogram resolution of the mutual-information estimator.
pub const MI_BINS: usize = 32;

/// Which similarity cost drives the registration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    /// Mean squared intensity difference.
    Ssd,
    /// Negated Pearson correlation of the paired intensities.
    Ncc,
    /// Negated mutual information from a Parzen-window joint histogram:
    /// box window on the fixed intensity, cubic B-spline window on the
    /// moving intensity.
    Mi,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Ssd => "ssd",
            MetricKind::Ncc => "ncc",
            MetricKind::Mi => "mi",
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ssd" => Ok(MetricKind::Ssd),
            "ncc" => Ok(MetricKind::Ncc),
            "mi" => Ok(MetricKind::Mi),
            other => Err(Error::Parameter(format!("unknown metric {other:?}"))),
        }
    }
}

/// Result of one metric evaluation.
#[derive(Debug, Clone)]
pub struct MetricReport {
    /// Cost (lower is better).
    pub value: f64,
    /// Derivative with respect to every transform coefficient,
    /// interleaved (x, y) per control point.
    pub gradient: Vec<f64>,
    /// Fraction of requested samples that mapped inside the moving image.
    pub valid_fraction: f64,
}

/// Prefiltered interpolants plus the transform, ready for repeated
/// evaluations at different coefficients without re-prefiltering.
pub struct MetricScratch {
    fixed: CubicSpline,
    moving: CubicSpline,
    /// Full-resolution pixels per pixel of the evaluated level
    /// (1 at level 0, 2^k at pyramid level k).
    scale: f64,
}

impl MetricScratch {
    pub fn new(fixed: &GrayImage, moving: &GrayImage) -> Self {
        Self::with_scale(fixed, moving, 1.0)
    }

    /// `scale` converts level coordinates to the full-resolution frame the
    /// transform lives in: full = level * scale.
    pub fn with_scale(fixed: &GrayImage, moving: &GrayImage, scale: f64) -> Self {
        MetricScratch {
            fixed: CubicSpline::new(fixed),
            moving: CubicSpline::new(moving),
            scale,
        }
    }
}

struct SampleEval {
    /// Fixed intensity at the sample.
    f: f64,
    /// Moving intensity at the mapped position.
    m: f64,
    /// Moving intensity gradient in full-resolution coordinates.
    gx: f64,
    gy: f64,
    /// Support stencil of the transform at the sample.
    base: (usize, usize),
    weights: [f64; SUPPORT],
}

/// Value and gradient of `kind` for transform `transform` over `samples`.
///
/// Convenience entry that prefilters both images per call; optimization
/// loops should build one [`MetricScratch`] and use
/// [`evaluate_with_scratch`].
pub fn metric_value_and_gradient(
    kind: MetricKind,
    fixed: &GrayImage,
    moving: &GrayImage,
    transform: &BSplineTransform,
    samples: &SampleSet,
) -> Result<MetricReport> {
    let scratch = MetricScratch::new(fixed, moving);
    evaluate_with_scratch(kind, &scratch, transform, samples)
}

pub fn evaluate_with_scratch(
    kind: MetricKind,
    scratch: &MetricScratch,
    transform: &BSplineTransform,
    samples: &SampleSet,
) -> Result<MetricReport> {
    let n_requested = samples.points.len();
    let mut evals: Vec<SampleEval> = Vec::with_capacity(n_requested);
    let s = scratch.scale;
    for p in &samples.points {
        // p is in level coordinates; the transform lives in full-res frame.
        let full = Point::new(p.x * s, p.y * s);
        if !transform.covers(full) {
            continue;
        }
        let mapped_full = transform.transform_point(full)?;
        let mapped_level = Point::new(mapped_full.x / s, mapped_full.y / s);
        if !scratch.moving.contains(mapped_level) {
            continue;
        }
        let f = scratch.fixed.value(*p)?;
        let (m, gx_l, gy_l) = scratch.moving.value_and_gradient(mapped_level)?;
        let sw = transform.support_weights(full)?;
        evals.push(SampleEval {
            f,
            m,
            gx: gx_l / s,
            gy: gy_l / s,
            base: sw.base,
            weights: sw.weights,
        });
    }

    let valid_fraction = evals.len() as f64 / n_requested as f64;
    if valid_fraction <= 0.5 {
        return Err(Error::DegenerateOverlap { valid_fraction });
    }

    let n_params = transform.coefficients().len();
    let nx = transform.dims().0;
    let mut gradient = vec![0.0; n_params];
    let value = match kind {
        MetricKind::Ssd => ssd(&evals, nx, &mut gradient),
        MetricKind::Ncc => ncc(&evals, nx, &mut gradient),
        MetricKind::Mi => mi(&evals, nx, &mut gradient),
    };

    Ok(MetricReport { value, gradient, valid_fraction })
}

/// Scatter one sample's intensity-direction derivative into the
/// coefficient gradient.
#[inline]
fn scatter(grad: &mut [f64], e: &SampleEval, nx: usize, dvalue_dm: f64) {
    for (k, w) in e.weights.iter().enumerate() {
        let (i, j) = (k % 4, k / 4);
        let idx = 2 * ((e.base.1 + j) * nx + e.base.0 + i);
        grad[idx] += dvalue_dm * e.gx * w;
        grad[idx + 1] += dvalue_dm * e.gy * w;
    }
}

fn ssd(evals: &[SampleEval], nx: usize, grad: &mut [f64]) -> f64 {
    let n = evals.len() as f64;
    let mut acc = 0.0;
    for e in evals {
        let d = e.f - e.m;
        acc += d * d;
        scatter(grad, e, nx, 2.0 * (e.m - e.f) / n);
    }
    acc / n
}

fn ncc(evals: &[SampleEval], nx: usize, grad: &mut [f64]) -> f64 {
    let n = evals.len() as f64;
    let mean_f = evals.iter().map(|e| e.f).sum::<f64>() / n;
    let mean_m = evals.iter().map(|e| e.m).sum::<f64>() / n;
    let (mut sff, mut smm, mut sfm) = (0.0, 0.0, 0.0);
    for e in evals {
        let (df, dm) = (e.f - mean_f, e.m - mean_m);
        sff += df * df;
        smm += dm * dm;
        sfm += df * dm;
    }
    let denom = (sff * smm).sqrt();
    if denom < 1e-30 {
        // constant intensities carry no correlation signal
        return 0.0;
    }
    let rho = sfm / denom;
    for e in evals {
        let (df, dm) = (e.f - mean_f, e.m - mean_m);
        let drho_dm = (df - sfm / smm * dm) / denom;
        scatter(grad, e, nx, -drho_dm);
    }
    -rho
}

fn mi(evals: &[SampleEval], nx: usize, grad: &mut [f64]) -> f64 {
    let n = evals.len() as f64;
    let bins = MI_BINS;
    // Moving intensities map to a continuous bin coordinate padded so the
    // 4-bin cubic window always stays inside the histogram.
    let m_scale = (bins - 3) as f64;
    let mut hist = vec![0.0f64; bins * bins];
    let mut placements: Vec<(usize, usize, f64)> = Vec::with_capacity(evals.len());
    for e in evals {
        let a = ((e.f * bins as f64) as usize).min(bins - 1);
        let sm = e.m.clamp(0.0, 1.0) * m_scale + 1.0;
        let i0 = (sm.floor() as usize).min(bins - 3);
        let u = sm - i0 as f64;
        let w = bspline_weights(u);
        for (k, wk) in w.iter().enumerate() {
            hist[a * bins + i0 - 1 + k] += wk;
        }
        placements.push((a, i0, u));
    }

    let inv_n = 1.0 / n;
    let mut p_fixed = vec![0.0f64; bins];
    let mut p_moving = vec![0.0f64; bins];
    for a in 0..bins {
        for b in 0..bins {
            let p = hist[a * bins + b] * inv_n;
            hist[a * bins + b] = p;
            p_fixed[a] += p;
            p_moving[b] += p;
        }
    }

    let mut mi_value = 0.0;
    for a in 0..bins {
        if p_fixed[a] <= 0.0 {
            continue;
        }
        for b in 0..bins {
            let p = hist[a * bins + b];
            if p > 0.0 && p_moving[b] > 0.0 {
                mi_value += p * (p / (p_fixed[a] * p_moving[b])).ln();
            }
        }
    }

    // d(-MI)/dc through the moving-side window derivative.
    for (e, &(a, i0, u)) in evals.iter().zip(&placements) {
        let dw = bspline_weight_derivs(u);
        let mut factor = 0.0;
        for (k, dwk) in dw.iter().enumerate() {
            let b = i0 - 1 + k;
            let p = hist[a * bins + b];
            if p > 0.0 && p_moving[b] > 0.0 && p_fixed[a] > 0.0 {
                factor += dwk * (p / (p_fixed[a] * p_moving[b])).ln();
            }
        }
        scatter(grad, e, nx, -inv_n * m_scale * factor);
    }

    -mi_value
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::cell_uniform;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn speckle(w: usize, h: usize, seed: u64) -> GrayImage {
        // smooth random texture: blurred white noise
        let noise: Vec<f64> = (0..w * h)
            .map(|i| cell_uniform(seed, (i % w) as u64, (i / w) as u64, 0))
            .collect();
        GrayImage::from_fn(w, h, |x, y| {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for dy in -2i32..=2 {
                for dx in -2i32..=2 {
                    let sx = (x as i32 + dx).clamp(0, w as i32 - 1) as usize;
                    let sy = (y as i32 + dy).clamp(0, h as i32 - 1) as usize;
                    let wgt = (-0.5 * ((dx * dx + dy * dy) as f64) / 1.2).exp();
                    acc += wgt * noise[sy * w + sx];
                    wsum += wgt;
                }
            }
            acc / wsum
        })
        .unwrap()
    }

    #[test]
    fn perfect_match_has_zero_ssd_and_full_ncc() {
        let img = speckle(48, 48, 1);
        let t = BSplineTransform::new((48, 48), (12.0, 12.0)).unwrap();
        let samples = SampleSet::draw(&img, 512, 4).unwrap();
        let ssd = metric_value_and_gradient(MetricKind::Ssd, &img, &img, &t, &samples).unwrap();
        assert!(ssd.value.abs() < 1e-16);
        let gnorm = ssd.gradient.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(gnorm < 1e-8, "gradient norm {gnorm}");
        assert!((ssd.valid_fraction - 1.0).abs() < 1e-12);

        let ncc = metric_value_and_gradient(MetricKind::Ncc, &img, &img, &t, &samples).unwrap();
        assert!((ncc.value + 1.0).abs() < 1e-12, "ncc {}", ncc.value);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let fixed = speckle(64, 48, 2);
        let moving = speckle(64, 48, 3);
        let mut t = BSplineTransform::new((64, 48), (16.0, 16.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for c in t.coefficients_mut() {
            *c = rng.random_range(-0.5..0.5);
        }
        let samples = SampleSet::draw(&fixed, 1500, 8).unwrap();
        let eps = 1e-5;

        for (kind, tol) in [
            (MetricKind::Ssd, 1e-5),
            (MetricKind::Ncc, 1e-5),
            (MetricKind::Mi, 1e-3),
        ] {
            let report =
                metric_value_and_gradient(kind, &fixed, &moving, &t, &samples).unwrap();
            let max_fd = {
                // probe all later; first find scale for zero-guard
                report.gradient.iter().map(|g| g.abs()).fold(0.0, f64::max)
            };
            let mut checked = 0;
            let n = report.gradient.len();
            while checked < 20 {
                let idx = rng.random_range(0..n);
                let mut cp = t.clone();
                cp.coefficients_mut()[idx] += eps;
                let vp = metric_value_and_gradient(kind, &fixed, &moving, &cp, &samples)
                    .unwrap()
                    .value;
                let mut cm = t.clone();
                cm.coefficients_mut()[idx] -= eps;
                let vm = metric_value_and_gradient(kind, &fixed, &moving, &cm, &samples)
                    .unwrap()
                    .value;
                let fd = (vp - vm) / (2.0 * eps);
                let analytic = report.gradient[idx];
                if fd.abs() < 1e-7 * max_fd.max(1e-12) {
                    // relative error is ill-posed at a vanishing component;
                    // require agreement in absolute terms instead
                    assert!(
                        (analytic - fd).abs() < 1e-9,
                        "{kind:?} coeff {idx}: {analytic} vs {fd}"
                    );
                } else {
                    let rel = (analytic - fd).abs() / fd.abs();
                    assert!(
                        rel < tol,
                        "{kind:?} coeff {idx}: analytic {analytic}, fd {fd}, rel {rel}"
                    );
                }
                checked += 1;
            }
        }
    }

    #[test]
    fn ncc_invariant_to_affine_rescaling() {
        let fixed = speckle(48, 48, 5);
        let moving = speckle(48, 48, 6);
        let rescaled = GrayImage::from_fn(48, 48, |x, y| 0.25 + 0.5 * moving.get(x, y)).unwrap();
        let t = BSplineTransform::new((48, 48), (12.0, 12.0)).unwrap();
        let samples = SampleSet::draw(&fixed, 800, 2).unwrap();
        let a = metric_value_and_gradient(MetricKind::Ncc, &fixed, &moving, &t, &samples).unwrap();
        let b =
            metric_value_and_gradient(MetricKind::Ncc, &fixed, &rescaled, &t, &samples).unwrap();
        assert!((a.value - b.value).abs() < 1e-9, "{} vs {}", a.value, b.value);

        let fixed_rescaled = GrayImage::from_fn(48, 48, |x, y| 0.1 + 0.8 * fixed.get(x, y)).unwrap();
        let c = metric_value_and_gradient(MetricKind::Ncc, &fixed_rescaled, &moving, &t, &samples)
            .unwrap();
        assert!((a.value - c.value).abs() < 1e-9);
    }

    #[test]
    fn mi_invariant_to_monotone_remapping_of_moving() {
        let fixed = speckle(64, 64, 7);
        let moving = speckle(64, 64, 8);
        let gamma = GrayImage::from_fn(64, 64, |x, y| moving.get(x, y).powf(1.5)).unwrap();
        let t = BSplineTransform::new((64, 64), (16.0, 16.0)).unwrap();
        let samples = SampleSet::draw(&fixed, 4000, 5).unwrap();
        let a = metric_value_and_gradient(MetricKind::Mi, &fixed, &moving, &t, &samples).unwrap();
        let b = metric_value_and_gradient(MetricKind::Mi, &fixed, &gamma, &t, &samples).unwrap();
        assert!(
            (a.value - b.value).abs() < 0.05,
            "gamma remap moved MI from {} to {}",
            a.value,
            b.value
        );
    }

    #[test]
    fn self_mi_beats_shuffled_mi_brute_force() {
        // Full-pixel hard-binned estimator, no sampling: an independent
        // oracle for the ordering.
        fn brute_mi(a: &GrayImage, b: &GrayImage) -> f64 {
            let bins = MI_BINS;
            let mut joint = vec![0.0f64; bins * bins];
            let n = (a.width() * a.height()) as f64;
            for (va, vb) in a.pixels().iter().zip(b.pixels()) {
                let ia = ((va * bins as f64) as usize).min(bins - 1);
                let ib = ((vb * bins as f64) as usize).min(bins - 1);
                joint[ia * bins + ib] += 1.0;
            }
            let mut pa = vec![0.0; bins];
            let mut pb = vec![0.0; bins];
            for i in 0..bins {
                for j in 0..bins {
                    joint[i * bins + j] /= n;
                    pa[i] += joint[i * bins + j];
                    pb[j] += joint[i * bins + j];
                }
            }
            let mut mi = 0.0;
            for i in 0..bins {
                for j in 0..bins {
                    let p = joint[i * bins + j];
                    if p > 0.0 {
                        mi += p * (p / (pa[i] * pb[j])).ln();
                    }
                }
            }
            -mi
        }

        let img = speckle(64, 64, 9);
        // spatial shuffle: deterministic permutation of pixels
        let mut perm: Vec<usize> = (0..64 * 64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for i in (1..perm.len()).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let shuffled = GrayImage::from_fn(64, 64, |x, y| {
            let src = perm[y * 64 + x];
            img.get(src % 64, src / 64)
        })
        .unwrap();

        let self_mi = brute_mi(&img, &img);
        let cross_mi = brute_mi(&img, &shuffled);
        assert!(
            self_mi < cross_mi,
            "self MI {self_mi} not below shuffled MI {cross_mi}"
        );
    }

    #[test]
    fn degenerate_overlap_is_an_error() {
        let fixed = speckle(32, 32, 12);
        let moving = speckle(32, 32, 13);
        let mut t = BSplineTransform::new((32, 32), (8.0, 8.0)).unwrap();
        // push everything far outside the moving image
        for (i, c) in t.coefficients_mut().iter_mut().enumerate() {
            *c = if i % 2 == 0 { 500.0 } else { 0.0 };
        }
        let samples = SampleSet::draw(&fixed, 200, 1).unwrap();
        match metric_value_and_gradient(MetricKind::Ssd, &fixed, &moving, &t, &samples) {
            Err(Error::DegenerateOverlap { valid_fraction }) => {
                assert!(valid_fraction <= 0.5)
            }
            other => panic!("expected degenerate overlap, got {other:?}"),
        }
    }

    #[test]
    fn all_metrics_improve_toward_ground_truth() {
        // Straight-line parameter path from a random perturbation to the
        // exact uniform-shift solution: the cost must fall along the way.
        let fixed = speckle(64, 64, 20);
        let spline = CubicSpline::new(&fixed);
        // moving = fixed translated by (1.5, -1.0): I_M(x) = I_F(x - t)
        let t_shift = (1.5, -1.0);
        let moving = GrayImage::from_fn(64, 64, |x, y| {
            let sx = (x as f64 - t_shift.0).clamp(0.0, 63.0);
            let sy = (y as f64 - t_shift.1).clamp(0.0, 63.0);
            spline.value(Point::new(sx, sy)).unwrap().clamp(0.0, 1.0)
        })
        .unwrap();

        let mut truth = BSplineTransform::new((64, 64), (16.0, 16.0)).unwrap();
        let n_cp = truth.dims().0 * truth.dims().1;
        for i in 0..n_cp {
            truth.coefficients_mut()[2 * i] = t_shift.0;
            truth.coefficients_mut()[2 * i + 1] = t_shift.1;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let perturbed: Vec<f64> = truth
            .coefficients()
            .iter()
            .map(|c| c + rng.random_range(-0.75..0.75))
            .collect();

        let samples = SampleSet::draw(&fixed, 3000, 6).unwrap();
        for kind in [MetricKind::Ssd, MetricKind::Ncc, MetricKind::Mi] {
            let steps = 20;
            let mut values = Vec::new();
            for s in 0..=steps {
                let alpha = s as f64 / steps as f64; // 0 = perturbed, 1 = truth
                let mut t = truth.clone();
                let mix: Vec<f64> = perturbed
                    .iter()
                    .zip(truth.coefficients())
                    .map(|(p, g)| p + alpha * (g - p))
                    .collect();
                t.set_coefficients(&mix).unwrap();
                let v = metric_value_and_gradient(kind, &fixed, &moving, &t, &samples)
                    .unwrap()
                    .value;
                values.push(v);
            }
            let improving = values.windows(2).filter(|w| w[1] <= w[0]).count();
            let frac = improving as f64 / steps as f64;
            assert!(
                frac >= 0.9,
                "{kind:?}: only {improving}/{steps} path steps improved: {values:?}"
            );
        }
    }

    #[test]
    fn unknown_metric_name_is_rejected() {
        assert!("mi".parse::<MetricKind>().is_ok());
        assert!("NCC".parse::<MetricKind>().is_ok());
        assert!("mutual".parse::<MetricKind>().is_err());
    }
}
