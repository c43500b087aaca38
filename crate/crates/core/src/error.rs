use std::path::PathBuf;

/// Errors produced by the measurement toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied parameter violates its contract.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A file could not be parsed; `offset` is the byte position of the
    /// first offending byte.
    #[error("format error in {path:?} at byte {offset}: {reason}")]
    Format {
        path: PathBuf,
        offset: usize,
        reason: String,
    },

    /// A continuous coordinate fell outside the queried domain.
    #[error("point ({x}, {y}) outside domain [0, {max_x}] x [0, {max_y}]")]
    OutOfBounds { x: f64, y: f64, max_x: f64, max_y: f64 },

    /// The region of interest contains no pixels.
    #[error("region of interest is empty")]
    EmptyRoi,

    /// Too few metric samples mapped inside the moving image.
    #[error("degenerate overlap: only {valid_fraction:.3} of samples mapped inside the moving image")]
    DegenerateOverlap { valid_fraction: f64 },

    /// A pyramid level would shrink the image below the minimum size.
    #[error("pyramid level {level} yields {width}x{height}, below the 8x8 minimum")]
    LevelTooDeep { level: u32, width: usize, height: usize },

    /// Every pixel was excluded by the MAPE denominator floor.
    #[error("MAPE undefined: all {excluded} candidate pixels fell below the denominator floor")]
    UndefinedMape { excluded: usize },

    /// Backward warping failed to invert the deformation field.
    #[error("deformation inversion did not converge at pixel ({x}, {y})")]
    InversionFailed { x: usize, y: usize },

    /// Subset correlation found no usable seed.
    #[error("no valid correlation seeds")]
    NoValidSeeds,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
