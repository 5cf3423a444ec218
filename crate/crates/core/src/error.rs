use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A system name that is not in the catalog.
    #[error("unknown system `{0}` (catalog: Lorenz, SprottE, RayleighBenard, SprottF, NoseHoover, Tsucs2, WangSun)")]
    Catalog(String),

    /// The integrator produced a non-finite state.
    #[error("trajectory diverged at step {step}")]
    Divergence { step: usize },

    /// Rotation between antiparallel vectors needs an explicit axis.
    #[error("rotation axis is undefined for antiparallel vectors; supply an explicit axis")]
    DegenerateAxis,

    /// Plane normal is the zero vector.
    #[error("plane normal must be nonzero")]
    InvalidPlane,

    /// Three points used to determine a plane are collinear.
    #[error("three-point plane basis is degenerate (collinear points)")]
    DegenerateBasis,

    /// Occlusion blocks cannot be packed without overlapping.
    #[error("cannot place {blocks} non-overlapping blocks of {block_len} frames in {frames} frames")]
    Packing {
        blocks: usize,
        block_len: usize,
        frames: usize,
    },

    /// Too few usable samples for a fit.
    #[error("insufficient data: need at least {needed} jointly valid frames, found {found}")]
    InsufficientData { needed: usize, found: usize },

    /// The stacked camera system cannot determine a 3D point.
    #[error("stacked camera matrix has rank < 3: {0}")]
    Rank(String),

    /// A size or count precondition was violated.
    #[error("size error: {0}")]
    Size(String),

    /// A time lies outside the spline domain.
    #[error("time {t} outside domain [{start}, {end}]")]
    Domain { t: f64, start: f64, end: f64 },

    /// Relative error against an all-zero reference is undefined.
    #[error("reference coefficients are all zero; relative error is undefined")]
    UndefinedError,

    /// Configuration or argument validation failure.
    #[error("invalid configuration: {0}")]
    Validation(String),

    /// Malformed input file.
    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    /// Expected file missing.
    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
