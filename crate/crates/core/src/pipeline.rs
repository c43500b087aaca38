//! Pairwise registration and the incremental sequence scheme.
//!
//! A pair is registered coarse to fine over the pyramid schedule with one
//! control-point grid fixed in full-resolution coordinates; coarse levels
//! only swap in smoothed, subsampled intensities (with sample coordinates
//! rescaled), so no grid resampling happens between levels.
//!
//! The recovered transform maps fixed-image coordinates into the moving
//! image (resampling convention): I_M(T(x)) ~ I_F(x). Registering with
//! fixed = frame i and moving = frame i+1 makes T the forward material
//! motion of step i, so cumulative motion is plain composition
//! x_(i+1) = T_i(x_i) from the undeformed grid.

use rayon::prelude::*;

use crate::asgd::{optimize, AsgdConfig, OptimizeTrace};
use crate::bspline::BSplineTransform;
use crate::error::{Error, Result};
use crate::field::DisplacementField;
use crate::image::{pyramid_level, CubicSpline, GrayImage, Interpolation, Point};
use crate::metrics::{evaluate_with_scratch, MetricKind, MetricScratch};
use crate::rng::derive_seed;
use crate::sample::{RoiPixels, SampleSet};
use crate::validate::{ssim, SsimReport};

/// Full configuration of a pairwise registration.
#[derive(Debug, Clone)]
pub struct RegistrationConfig {
    pub metric: MetricKind,
    /// Random samples per iteration.
    pub samples: usize,
    /// Control-point spacing (x, y) in full-resolution pixels.
    pub spacing: (f64, f64),
    /// Pyramid schedule, coarse to fine, strictly decreasing; `[0]` runs a
    /// single full-resolution stage.
    pub pyramid_levels: Vec<u32>,
    pub asgd: AsgdConfig,
    /// Interpolation used when resampling the moving image.
    pub resampling: Interpolation,
}

impl RegistrationConfig {
    pub fn with_spacing(sx: f64, sy: f64) -> Self {
        RegistrationConfig {
            metric: MetricKind::Mi,
            samples: 2048,
            spacing: (sx, sy),
            pyramid_levels: vec![0],
            asgd: AsgdConfig::default(),
            resampling: Interpolation::CubicBspline,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples < 64 {
            return Err(Error::Parameter(format!(
                "sample count {} below minimum 64",
                self.samples
            )));
        }
        if !(self.spacing.0 > 0.0 && self.spacing.1 > 0.0) {
            return Err(Error::Parameter(format!(
                "control-point spacing must be positive, got ({}, {})",
                self.spacing.0, self.spacing.1
            )));
        }
        if self.pyramid_levels.is_empty() {
            return Err(Error::Parameter("pyramid schedule is empty".into()));
        }
        if !self.pyramid_levels.windows(2).all(|w| w[0] > w[1]) {
            return Err(Error::Parameter(format!(
                "pyramid schedule {:?} must be strictly decreasing (coarse to fine)",
                self.pyramid_levels
            )));
        }
        self.asgd.validate()
    }
}

/// Register `moving` onto `fixed`; the result maps fixed coordinates into
/// the moving image. Returns the finest-level transform and that level's
/// optimization trace (flagged if any level aborted on degenerate overlap).
pub fn register_pair(
    fixed: &GrayImage,
    moving: &GrayImage,
    cfg: &RegistrationConfig,
) -> Result<(BSplineTransform, OptimizeTrace)> {
    cfg.validate()?;
    if fixed.width() != moving.width() || fixed.height() != moving.height() {
        return Err(Error::Parameter(format!(
            "image dimensions differ: {}x{} vs {}x{}",
            fixed.width(),
            fixed.height(),
            moving.width(),
            moving.height()
        )));
    }

    let mut transform =
        BSplineTransform::new((fixed.width(), fixed.height()), cfg.spacing)?;
    let mut last_trace = OptimizeTrace::default();

    for (level_index, &level) in cfg.pyramid_levels.iter().enumerate() {
        let fixed_level = pyramid_level(fixed, level)?;
        let moving_level = pyramid_level(moving, level)?;
        let scale = f64::from(1u32 << level);
        let scratch = MetricScratch::with_scale(&fixed_level, &moving_level, scale);
        let roi = RoiPixels::collect(&fixed_level)?;

        let mut work = transform.clone();
        let metric = cfg.metric;
        let n = cfg.samples;
        let seed_base = cfg.asgd.seed;
        let mut evaluator = move |coeffs: &[f64], iteration: u32| {
            work.set_coefficients(coeffs)?;
            let seed = derive_seed(
                seed_base,
                "metric-samples",
                ((level_index as u64) << 40) | u64::from(iteration),
            );
            let samples = SampleSet::draw_from(&roi, n, seed);
            evaluate_with_scratch(metric, &scratch, &work, &samples)
        };

        let (coeffs, trace) = optimize(&mut evaluator, transform.coefficients(), &cfg.asgd)?;
        transform.set_coefficients(&coeffs)?;
        let aborted = trace.aborted;
        last_trace = trace;
        if aborted {
            break;
        }
    }
    Ok((transform, last_trace))
}

/// Warp the moving image onto the fixed grid: output(x) = moving(T(x)).
/// Pixels mapping outside the moving image are masked out of the result.
pub fn resample_moving(
    moving: &GrayImage,
    transform: &BSplineTransform,
    scheme: Interpolation,
) -> Result<GrayImage> {
    let (w, h) = (moving.width(), moving.height());
    let spline = match scheme {
        Interpolation::CubicBspline => Some(CubicSpline::new(moving)),
        Interpolation::Bilinear => None,
    };
    let rows: Vec<usize> = (0..h).collect();
    let out: std::result::Result<Vec<(Vec<f64>, Vec<bool>)>, Error> = rows
        .par_iter()
        .map(|&y| {
            let mut vals = Vec::with_capacity(w);
            let mut mask = Vec::with_capacity(w);
            for x in 0..w {
                let p = Point::new(x as f64, y as f64);
                if !transform.covers(p) {
                    vals.push(0.0);
                    mask.push(false);
                    continue;
                }
                let q = transform.transform_point(p)?;
                // snap within rounding noise of a node: interpolation is
                // exact there and identity/integer-shift warps stay
                // bit-exact despite partition-of-unity roundoff
                let snap = |v: f64| {
                    let r = v.round();
                    if (v - r).abs() < 1e-9 {
                        r
                    } else {
                        v
                    }
                };
                let q = Point::new(snap(q.x), snap(q.y));
                if !moving.contains(q) {
                    vals.push(0.0);
                    mask.push(false);
                    continue;
                }
                let v = if q.x.fract() == 0.0 && q.y.fract() == 0.0 {
                    moving.get(q.x as usize, q.y as usize)
                } else {
                    match &spline {
                        Some(s) => s.value(q)?.clamp(0.0, 1.0),
                        None => crate::image::interpolate(moving, q, Interpolation::Bilinear)?,
                    }
                };
                vals.push(v);
                mask.push(true);
            }
            Ok((vals, mask))
        })
        .collect();
    let mut data = Vec::with_capacity(w * h);
    let mut mask = Vec::with_capacity(w * h);
    for (vals, m) in out? {
        data.extend(vals);
        mask.extend(m);
    }
    GrayImage::from_vec(w, h, data)?.with_mask(mask)
}

/// Result of registering an ordered image sequence.
#[derive(Debug, Clone)]
pub struct SequenceResult {
    /// Forward step transforms T_0 .. T_(N-2).
    pub step_transforms: Vec<BSplineTransform>,
    /// Cumulative displacement of the undeformed grid after each step.
    pub cumulative: Vec<DisplacementField>,
    /// Mean SSIM between each fixed frame and the warped next frame.
    pub ssim_means: Vec<f64>,
    /// Per-step metric value at the optimizer endpoint.
    pub final_values: Vec<f64>,
    /// Steps whose optimization aborted on degenerate overlap.
    pub aborted: Vec<bool>,
}

impl SequenceResult {
    pub fn steps(&self) -> usize {
        self.step_transforms.len()
    }

    /// Stored cumulative field for one step.
    pub fn cumulative_displacement(&self, step: usize) -> Result<&DisplacementField> {
        self.cumulative.get(step).ok_or_else(|| {
            Error::Parameter(format!(
                "step {step} out of range: sequence has {} steps",
                self.cumulative.len()
            ))
        })
    }

    /// Structured-text summary: one line per step.
    pub fn summary(&self) -> String {
        let mut s = String::from("step,ssim_mean,final_metric_value,aborted\n");
        for i in 0..self.steps() {
            s.push_str(&format!(
                "{},{},{},{}\n",
                i, self.ssim_means[i], self.final_values[i], self.aborted[i]
            ));
        }
        s
    }
}

/// Register consecutive pairs of an ordered sequence and compose the
/// forward step transforms on the undeformed grid of frame 0.
///
/// A grid pixel becomes (and stays) invalid from the first step its tracked
/// position leaves the next frame's image domain or the transform's covered
/// region; pixels outside frame 0's region of interest start invalid.
/// An aborted step is flagged and its (partial) transform still applied.
pub fn register_sequence(images: &[GrayImage], cfg: &RegistrationConfig) -> Result<SequenceResult> {
    cfg.validate()?;
    if images.len() < 2 {
        return Err(Error::Parameter(format!(
            "sequence needs at least 2 images, got {}",
            images.len()
        )));
    }
    let (w, h) = (images[0].width(), images[0].height());
    for (i, img) in images.iter().enumerate() {
        if img.width() != w || img.height() != h {
            return Err(Error::Parameter(format!(
                "image {i} is {}x{}, expected {w}x{h}",
                img.width(),
                img.height()
            )));
        }
    }

    let mut result = SequenceResult {
        step_transforms: Vec::new(),
        cumulative: Vec::new(),
        ssim_means: Vec::new(),
        final_values: Vec::new(),
        aborted: Vec::new(),
    };

    // tracked positions of the undeformed grid
    let mut pos_x: Vec<f64> = (0..w * h).map(|i| (i % w) as f64).collect();
    let mut pos_y: Vec<f64> = (0..w * h).map(|i| (i / w) as f64).collect();
    let mut alive: Vec<bool> = match images[0].mask() {
        Some(m) => m.to_vec(),
        None => vec![true; w * h],
    };

    for step in 0..images.len() - 1 {
        let fixed = &images[step];
        let moving = &images[step + 1];
        let mut step_cfg = cfg.clone();
        step_cfg.asgd.seed = derive_seed(cfg.asgd.seed, "sequence-step", step as u64);
        let (transform, trace) = register_pair(fixed, moving, &step_cfg)?;

        // advance the tracked grid
        let max_x = (w - 1) as f64;
        let max_y = (h - 1) as f64;
        let updates: Vec<Option<(f64, f64)>> = (0..w * h)
            .into_par_iter()
            .map(|i| {
                if !alive[i] {
                    return None;
                }
                let p = Point::new(pos_x[i], pos_y[i]);
                if !transform.covers(p) {
                    return None;
                }
                let q = transform.transform_point(p).ok()?;
                if q.x < 0.0 || q.y < 0.0 || q.x > max_x || q.y > max_y {
                    return None;
                }
                Some((q.x, q.y))
            })
            .collect();
        let mut field = DisplacementField::zeros(w, h);
        for i in 0..w * h {
            match updates[i] {
                Some((x, y)) => {
                    pos_x[i] = x;
                    pos_y[i] = y;
                    field.set(i % w, i / w, x - (i % w) as f64, y - (i / w) as f64);
                }
                None => {
                    alive[i] = false;
                    field.invalidate(i % w, i / w);
                }
            }
        }

        // alignment quality of this step on the jointly valid region
        let warped = resample_moving(moving, &transform, cfg.resampling)?;
        let region: Vec<bool> = (0..w * h)
            .map(|i| {
                warped.mask().map_or(true, |m| m[i]) && fixed.mask().map_or(true, |m| m[i])
            })
            .collect();
        let ssim_mean = match ssim(fixed, &warped, Some(&region)) {
            Ok(r) => r.mean,
            Err(Error::EmptyRoi) => f64::NAN,
            Err(e) => return Err(e),
        };

        result.final_values.push(trace.final_value().unwrap_or(f64::NAN));
        result.aborted.push(trace.aborted);
        result.ssim_means.push(ssim_mean);
        result.step_transforms.push(transform);
        result.cumulative.push(field);
    }
    Ok(result)
}

/// SSIM between the fixed image and the warped moving image over their
/// jointly valid region (helper shared by tests and the command line).
pub fn warped_ssim(
    fixed: &GrayImage,
    moving: &GrayImage,
    transform: &BSplineTransform,
    scheme: Interpolation,
) -> Result<SsimReport> {
    let warped = resample_moving(moving, transform, scheme)?;
    let n = fixed.width() * fixed.height();
    let region: Vec<bool> = (0..n)
        .map(|i| warped.mask().map_or(true, |m| m[i]) && fixed.mask().map_or(true, |m| m[i]))
        .collect();
    ssim(fixed, &warped, Some(&region))
}

/// Displacement of the undeformed grid induced by one transform
/// (single-pair convenience; validity per the sequence rules).
pub fn transform_to_field(
    transform: &BSplineTransform,
    width: usize,
    height: usize,
    roi: Option<&[bool]>,
) -> DisplacementField {
    let mut field = DisplacementField::zeros(width, height);
    let max_x = (width - 1) as f64;
    let max_y = (height - 1) as f64;
    for y in 0..height {
        for x in 0..width {
            if roi.is_some_and(|m| !m[y * width + x]) {
                field.invalidate(x, y);
                continue;
            }
            let p = Point::new(x as f64, y as f64);
            if !transform.covers(p) {
                field.invalidate(x, y);
                continue;
            }
            match transform.transform_point(p) {
                Ok(q) if q.x >= 0.0 && q.y >= 0.0 && q.x <= max_x && q.y <= max_y => {
                    field.set(x, y, q.x - p.x, q.y - p.y);
                }
                _ => field.invalidate(x, y),
            }
        }
    }
    field
}
