//! Full-field deformation measurement from grayscale image sequences.
//!
//! The toolkit recovers dense displacement and Green-Lagrange strain fields
//! from sequences of 2-D images of a deforming specimen by non-rigid
//! B-spline registration of consecutive frames, and cross-validates the
//! result against an analytic ground truth or a subset-based correlation
//! oracle.
//!
//! The main flow:
//! 1. [`synth`] builds speckle images and exactly warped benchmark pairs.
//! 2. [`pipeline::register_sequence`] registers consecutive frames with a
//!    [`bspline::BSplineTransform`] driven by a sampled similarity metric
//!    ([`metrics`]) under adaptive stochastic gradient descent ([`asgd`]),
//!    then composes the per-step motions on the undeformed grid.
//! 3. [`strain::green_lagrange_strain`] differentiates the displacement
//!    field.
//! 4. [`validate`] (MAPE, SSIM) and [`dic`] quantify agreement.

pub mod asgd;
pub mod bspline;
pub mod dic;
pub mod error;
pub mod field;
pub mod image;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod sample;
pub mod strain;
pub mod synth;
pub mod validate;

pub use asgd::{AsgdConfig, OptimizeTrace};
pub use bspline::BSplineTransform;
pub use dic::{dic_displacement, dic_strain, DicParams};
pub use error::{Error, Result};
pub use field::DisplacementField;
pub use image::{
    interpolate, intensity_gradient, load_pgm, load_roi_mask, pyramid_level, save_pgm,
    CubicSpline, GrayImage, Interpolation, Point,
};
pub use metrics::{metric_value_and_gradient, MetricKind, MetricReport};
pub use pipeline::{
    register_pair, register_sequence, resample_moving, transform_to_field, warped_ssim,
    RegistrationConfig, SequenceResult,
};
pub use sample::SampleSet;
pub use strain::{green_lagrange_strain, StrainField};
pub use synth::{
    generate_pair, generate_sequence, generate_speckle, AnalyticField, Axis, SpeckleParams,
    SyntheticPair, SyntheticSequence,
};
pub use validate::{mape, ssim, MapeReport, SsimReport};
