//! Synthetic multi-camera scenes: ground-truth trajectories, projected pixel
//! tracks, rendered frames and corruption (noise, occlusion blocks).

mod corrupt;
mod render;

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::{auto_substeps, eval_rhs, integrate_field, SystemSpec, Trajectory};
use crate::error::{Error, Result};
use crate::geometry::{image_to_raster, raster_in_frame, CameraModel};
use crate::tracking::PixelTrack;

pub use corrupt::{
    apply_block_missing, apply_fiber_missing, apply_track_noise, ValidityMask, BLOCK_FRACTION, FIBER_BLOCKS, MAX_MISSING_RATE,
};
pub use render::{
    apply_noise, apply_noise_frame, read_container, read_ppm, render_frame, render_frames, write_container, write_ppm,
    Background, ContainerIndex, FrameSequence, RenderConfig, RgbFrame,
};

/// Derive an independent RNG seed for a named sub-stream.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Which system to simulate: a catalog entry (with optional overrides) or
/// explicit polynomial equations keyed by term label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equations: Option<[BTreeMap<String, f64>; 3]>,
}

impl SystemConfig {
    pub fn catalog(name: &str) -> Self {
        Self {
            name: name.to_string(),
            params: BTreeMap::new(),
            x0: None,
            equations: None,
        }
    }

    pub fn resolve(&self) -> Result<SystemSpec> {
        match &self.equations {
            Some(eqs) => {
                let x0 = self
                    .x0
                    .ok_or_else(|| Error::Validation(format!("custom system `{}` needs x0", self.name)))?;
                SystemSpec::custom(&self.name, eqs, x0)
            }
            None => SystemSpec::catalog_with(&self.name, &self.params, self.x0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarkerShape {
    Disk,
    Square,
    Polygon,
}

/// Appearance of the tracked target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerSpec {
    pub shape: MarkerShape,
    /// Nominal radius in pixels (circumradius for square/polygon).
    pub size_px: f64,
    pub color: [u8; 3],
    #[serde(default)]
    pub self_rotation: bool,
    /// Relative per-frame radius variation, uniform in `[-j, j]`.
    #[serde(default)]
    pub size_jitter: f64,
    /// Vertex count for `polygon`.
    #[serde(default = "default_sides")]
    pub sides: u32,
}

fn default_sides() -> u32 {
    5
}

impl Default for MarkerSpec {
    fn default() -> Self {
        Self {
            shape: MarkerShape::Disk,
            size_px: 5.0,
            color: [255, 40, 40],
            self_rotation: false,
            size_jitter: 0.0,
            sides: default_sides(),
        }
    }
}

impl MarkerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.size_px >= 2.0) {
            return Err(Error::Validation(format!("marker size_px must be >= 2, got {}", self.size_px)));
        }
        if !(0.0..1.0).contains(&self.size_jitter) {
            return Err(Error::Validation("marker size_jitter must be in [0, 1)".into()));
        }
        if self.shape == MarkerShape::Polygon && self.sides < 3 {
            return Err(Error::Validation("polygon marker needs at least 3 sides".into()));
        }
        Ok(())
    }
}

fn default_fps() -> f64 {
    25.0
}
fn default_duration() -> f64 {
    40.0
}
fn default_true() -> bool {
    true
}

/// Everything needed to synthesize one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub system: SystemConfig,
    /// Exactly three cameras, one calibrated. Empty means "frame the
    /// trajectory automatically" (see [`auto_cameras`]).
    #[serde(default)]
    pub cameras: Vec<CameraModel>,
    /// Translation from the system's native frame to the reference frame.
    #[serde(default)]
    pub ref_offset: [f64; 3],
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default)]
    pub marker: MarkerSpec,
    #[serde(default)]
    pub seed: u64,
    /// Round projected coordinates to integer pixels.
    #[serde(default = "default_true")]
    pub quantize: bool,
    /// RK4 steps per output frame; 0 picks [`auto_substeps`].
    #[serde(default)]
    pub substeps: usize,
    /// Seconds simulated and discarded before recording starts.
    #[serde(default)]
    pub transient: f64,
}

impl SceneConfig {
    /// Catalog system, default sampling (25 fps, 40 s) and auto-framed cameras.
    pub fn new(system: &str, ref_offset: [f64; 3], seed: u64) -> Self {
        Self {
            system: SystemConfig::catalog(system),
            cameras: Vec::new(),
            ref_offset,
            fps: default_fps(),
            duration: default_duration(),
            marker: MarkerSpec::default(),
            seed,
            quantize: true,
            substeps: 0,
            transient: 0.0,
        }
    }

    pub fn n_frames(&self) -> usize {
        (self.duration * self.fps).round() as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.duration > 0.0) {
            return Err(Error::Validation("fps and duration must be positive".into()));
        }
        if self.transient < 0.0 {
            return Err(Error::Validation("transient must be >= 0".into()));
        }
        self.marker.validate()?;
        if !self.cameras.is_empty() {
            validate_rig(&self.cameras)?;
        }
        Ok(())
    }
}

/// Exactly three valid cameras, exactly one calibrated.
pub fn validate_rig(cameras: &[CameraModel]) -> Result<()> {
    if cameras.len() != 3 {
        return Err(Error::Validation(format!("need exactly 3 cameras, got {}", cameras.len())));
    }
    let calibrated = cameras.iter().filter(|c| c.calibrated).count();
    if calibrated != 1 {
        return Err(Error::Validation(format!("exactly one camera must be calibrated, got {calibrated}")));
    }
    for c in cameras {
        c.validate()?;
        c.rotation()?;
    }
    Ok(())
}

/// Default viewing directions; the first camera looks straight down `z`.
pub const AUTO_NORMALS: [[f64; 3]; 3] = [[0.0, 0.0, 1.0], [1.0, 0.25, 0.35], [-0.3, 1.0, 0.45]];
/// Default in-plane rotations.
pub const AUTO_THETAS: [f64; 3] = [0.1, 0.35, -0.25];

/// Three cameras framing `truth` so it fills ~75% of a 512 px image; the
/// first camera is the calibrated one.
pub fn auto_cameras(truth: &Trajectory) -> Result<Vec<CameraModel>> {
    let (lo, hi) = truth.bounding_box();
    let center = Vector3::new((lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0);
    let mut cams = Vec::with_capacity(3);
    for (i, (n, theta)) in AUTO_NORMALS.iter().zip(AUTO_THETAS).enumerate() {
        let n = Vector3::from(*n).normalize();
        let probe = CameraModel::looking_along(n, center + n * 50.0, 1.0, theta, i == 0)?;
        let rot = probe.rotation()?;
        // widest excursion from the image center, in reference units
        let mut reach: f64 = 0.0;
        for s in &truth.x {
            let p = probe.project_with(&rot, &Vector3::from(*s), false);
            reach = reach.max(p.x.abs()).max(p.y.abs());
        }
        let half = probe.image_size.0.min(probe.image_size.1) as f64 / 2.0;
        let s = (reach / (0.75 * half)).max(1e-6);
        cams.push(CameraModel::looking_along(n, center + n * 50.0, s, theta, i == 0)?);
    }
    Ok(cams)
}

/// Ground truth plus one pixel track per camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub truth: Trajectory,
    pub cameras: Vec<CameraModel>,
    pub tracks: Vec<PixelTrack>,
}

impl Scene {
    pub fn masks(&self) -> Vec<&ValidityMask> {
        self.tracks.iter().map(|t| &t.mask).collect()
    }
}

/// Simulate the reference-frame trajectory of `config`.
pub fn simulate_truth(config: &SceneConfig) -> Result<(SystemSpec, Trajectory)> {
    let system = config.system.resolve()?;
    let dt = 1.0 / config.fps;
    let n_frames = config.n_frames();
    let skip = (config.transient * config.fps).round() as usize;
    let substeps = if config.substeps == 0 { auto_substeps(dt) } else { config.substeps };
    let raw = integrate_field(|s| eval_rhs(&system, s), system.x0, dt, n_frames - 1 + skip, substeps)?;
    let traj = Trajectory {
        t: raw.t[..n_frames].to_vec(),
        x: raw.x[skip..].to_vec(),
    };
    Ok((system, traj.shifted(config.ref_offset)))
}

/// Project every sample through `camera`. Samples outside the image are
/// flagged invalid.
pub fn project_track(truth: &Trajectory, camera: &CameraModel, quantize: bool) -> Result<PixelTrack> {
    camera.validate()?;
    let rot = camera.rotation()?;
    let mut coords = Vec::with_capacity(truth.len());
    let mut valid = Vec::with_capacity(truth.len());
    for s in &truth.x {
        let p = camera.project_with(&rot, &Vector3::from(*s), quantize);
        let (u, v) = image_to_raster([p.x, p.y], camera.image_size);
        coords.push([u, v]);
        valid.push(raster_in_frame(u, v, camera.image_size));
    }
    Ok(PixelTrack {
        frames: (0..truth.len()).collect(),
        coords,
        mask: ValidityMask::from(valid),
    })
}

/// Full scene: truth, resolved cameras and projected pixel tracks.
pub fn generate_scene(config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let (_, truth) = simulate_truth(config)?;
    let cameras = if config.cameras.is_empty() {
        auto_cameras(&truth)?
    } else {
        config.cameras.clone()
    };
    validate_rig(&cameras)?;
    let tracks = cameras
        .iter()
        .map(|c| project_track(&truth, c, config.quantize))
        .collect::<Result<Vec<_>>>()?;
    Ok(Scene { truth, cameras, tracks })
}
