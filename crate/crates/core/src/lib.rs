//! Recover the governing equations of a target moving in 3D from the pixel
//! tracks of three fixed cameras.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! 1. [`dynamics`]: simulate a chaotic system with RK4.
//! 2. [`synth`]: project the trajectory through three cameras, optionally
//!    render frames, and inject noise or occlusions.
//! 3. [`tracking`]: recover marker centroids from rendered frames.
//! 4. [`reconstruction`]: learn the unknown camera scales/rotations from one
//!    calibrated camera, then triangulate the 3D trajectory.
//! 5. [`discovery`]: fit a cubic B-spline jointly with a sparse polynomial
//!    ODE (STRidge alternated with a physics-informed refit).
//! 6. [`metrics`]: score the recovered coefficients against ground truth.
//!
//! [`experiment`] chains the stages into trials and sweeps.

pub mod discovery;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod linalg;
pub mod metrics;
pub mod poly;
pub mod reconstruction;
pub mod spline;
pub mod synth;
pub mod tracking;

pub use error::{Error, Result};
pub use poly::{CandidateLibrary, CoefficientMatrix};
