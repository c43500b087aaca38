//! Adaptive stochastic gradient descent over transform coefficients.
//!
//! Steps follow mu <- mu - gamma(t_k) * g_k with the gain
//! gamma(t) = a / (A + t)^alpha. The effective time t advances by a
//! sigmoid of -<g_k, g_{k-1}>/omega, clamped at zero: agreeing successive
//! gradients pull t down and keep steps large, disagreement pushes t up and
//! damps the gain. The sigmoid is asymmetric (range [-0.8, 1]) so that
//! uncorrelated gradients - pure sampling noise near an optimum - advance
//! time on average and the gain decays; a symmetric range would leave the
//! expected advance at zero and let noise walk the coefficients
//! indefinitely.

use crate::error::{Error, Result};
use crate::metrics::MetricReport;

/// Optimizer settings. `gain_numerator` of `None` auto-scales the first
/// step to a maximum control-point motion of one pixel.
#[derive(Debug, Clone)]
pub struct AsgdConfig {
    pub max_iterations: u32,
    /// Gain numerator `a`; estimated from the first gradient when `None`.
    pub gain_numerator: Option<f64>,
    /// Gain offset `A` (>= 1).
    pub gain_offset: f64,
    /// Gain exponent `alpha` in (0.5, 1].
    pub gain_exponent: f64,
    /// Sigmoid scale `omega` (> 0) of the time update.
    pub time_window: f64,
    /// Seed of the per-iteration sample stream.
    pub seed: u64,
}

impl Default for AsgdConfig {
    fn default() -> Self {
        AsgdConfig {
            max_iterations: 500,
            gain_numerator: None,
            gain_offset: 20.0,
            gain_exponent: 0.602,
            time_window: 0.1,
            seed: 0,
        }
    }
}

impl AsgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::Parameter("max_iterations must be at least 1".into()));
        }
        if let Some(a) = self.gain_numerator {
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::Parameter(format!("gain numerator a = {a} must be > 0")));
            }
        }
        if !(self.gain_offset >= 1.0) || !self.gain_offset.is_finite() {
            return Err(Error::Parameter(format!(
                "gain offset A = {} must be >= 1",
                self.gain_offset
            )));
        }
        if !(self.gain_exponent > 0.5 && self.gain_exponent <= 1.0) {
            return Err(Error::Parameter(format!(
                "gain exponent alpha = {} must lie in (0.5, 1]",
                self.gain_exponent
            )));
        }
        if !(self.time_window > 0.0) || !self.time_window.is_finite() {
            return Err(Error::Parameter(format!(
                "time window omega = {} must be > 0",
                self.time_window
            )));
        }
        Ok(())
    }
}

/// One optimization iteration as recorded in the trace.
#[derive(Debug, Clone, Copy)]
pub struct TraceEntry {
    pub iteration: u32,
    pub value: f64,
    pub gradient_norm: f64,
    pub step_size: f64,
    pub effective_time: f64,
    pub valid_fraction: f64,
}

/// Per-iteration record of an optimization run.
#[derive(Debug, Clone, Default)]
pub struct OptimizeTrace {
    pub entries: Vec<TraceEntry>,
    /// Set when the evaluator reported degenerate overlap and the run
    /// stopped early, keeping the last valid iterate.
    pub aborted: bool,
    /// The starting gain numerator (auto-estimated or configured); later
    /// oscillation-halving only shrinks it.
    pub gain_numerator: f64,
}

impl OptimizeTrace {
    pub fn final_value(&self) -> Option<f64> {
        self.entries.last().map(|e| e.value)
    }

    /// Render as CSV: iteration, value, gradient norm, step size,
    /// effective time, valid fraction.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,value,gradient_norm,step_size,effective_time,valid_fraction\n");
        for e in &self.entries {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.iteration, e.value, e.gradient_norm, e.step_size, e.effective_time, e.valid_fraction
            ));
        }
        s
    }
}

/// Bounds of the time-update sigmoid. The asymmetry (|min| < max) gives a
/// positive expected advance under uncorrelated gradients.
const SIGMOID_MAX: f64 = 1.0;
const SIGMOID_MIN: f64 = -0.8;

/// Cosine of successive gradients below which the gain numerator itself is
/// halved: persistent anti-correlation means the step size overshoots the
/// local curvature, which the polynomially-decaying gain cannot repair on
/// its own.
const OSCILLATION_COSINE: f64 = -0.7;

/// No iteration may move a control point farther than this (pixels), the
/// same cap the first-step auto-scaling targets.
const MAX_STEP_DISPLACEMENT: f64 = 1.0;

fn time_delta(dot: f64, omega: f64) -> f64 {
    let s = 1.0 / (1.0 + (dot / omega).exp());
    SIGMOID_MIN + (SIGMOID_MAX - SIGMOID_MIN) * s
}

/// Maximum per-control-point displacement magnitude of a step along `g`.
fn max_control_point_norm(g: &[f64]) -> f64 {
    g.chunks(2)
        .map(|c| (c[0] * c[0] + c[1] * c[1]).sqrt())
        .fold(0.0, f64::max)
}

/// Minimize a sampled metric over the coefficient vector.
///
/// The evaluator receives the current coefficients and the iteration index
/// (for per-iteration sample redraw) and returns a [`MetricReport`]. It must
/// be deterministic given those inputs. Runs exactly `max_iterations`
/// iterations; a degenerate-overlap error aborts the run, returning the last
/// valid coefficients with the trace flagged.
pub fn optimize<F>(
    evaluator: &mut F,
    initial: &[f64],
    cfg: &AsgdConfig,
) -> Result<(Vec<f64>, OptimizeTrace)>
where
    F: FnMut(&[f64], u32) -> Result<MetricReport>,
{
    cfg.validate()?;
    let mut mu = initial.to_vec();
    let mut trace = OptimizeTrace::default();
    let mut time = 0.0f64;
    let mut prev_gradient: Option<Vec<f64>> = None;
    let mut gain_numerator = cfg.gain_numerator.unwrap_or(f64::NAN);
    trace.gain_numerator = gain_numerator;

    for k in 0..cfg.max_iterations {
        let report = match evaluator(&mu, k) {
            Ok(r) => r,
            Err(Error::DegenerateOverlap { .. }) => {
                trace.aborted = true;
                break;
            }
            Err(other) => return Err(other),
        };
        let g = report.gradient;

        if gain_numerator.is_nan() {
            // First-step displacement cap: the largest control-point motion
            // of step gamma(0) * g_0 is one pixel.
            let gmax = max_control_point_norm(&g);
            gain_numerator = if gmax > 1e-12 {
                cfg.gain_offset.powf(cfg.gain_exponent) / gmax
            } else {
                1.0
            };
            trace.gain_numerator = gain_numerator;
        }

        let mut step = gain_numerator / (cfg.gain_offset + time).powf(cfg.gain_exponent);
        let step_reach = step * max_control_point_norm(&g);
        if step_reach > MAX_STEP_DISPLACEMENT {
            step *= MAX_STEP_DISPLACEMENT / step_reach;
        }
        let gradient_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        trace.entries.push(TraceEntry {
            iteration: k,
            value: report.value,
            gradient_norm,
            step_size: step,
            effective_time: time,
            valid_fraction: report.valid_fraction,
        });

        for (m, gi) in mu.iter_mut().zip(&g) {
            *m -= step * gi;
        }

        if let Some(prev) = &prev_gradient {
            let dot: f64 = g.iter().zip(prev).map(|(a, b)| a * b).sum();
            let prev_norm = prev.iter().map(|v| v * v).sum::<f64>().sqrt();
            let cosine = dot / (gradient_norm * prev_norm).max(1e-300);
            if cosine < OSCILLATION_COSINE {
                gain_numerator *= 0.5;
            }
            time = (time + time_delta(dot, cfg.time_window)).max(0.0);
        }
        prev_gradient = Some(g);
    }

    Ok((mu, trace))
}
