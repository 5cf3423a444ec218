//! End-to-end trials and sweeps: simulate, observe, reconstruct, discover,
//! score.

mod overrides;
mod plot;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use overrides::{apply_override, apply_overrides};
pub use plot::{emit_plot_data, write_overlay, PlotFiles};

use crate::discovery::{ado_fit, DiscoveryConfig, DiscoveryResult};
use crate::dynamics::{shift_truth_coefficients, Trajectory};
use crate::error::{Error, Result};
use crate::metrics::{score, simulate_discovered, write_results_csv, DiscoveryScore, ScoreRow};
use crate::reconstruction::{fit_camera_params, reconstruct_3d, OptimizerConfig, Reconstruction, RigEstimate};
use crate::synth::{
    apply_block_missing, apply_fiber_missing, apply_track_noise, derive_seed, generate_scene, Background, RenderConfig,
    Scene, SceneConfig, ValidityMask,
};
use crate::tracking::{render_and_track, PixelTrack, DEFAULT_TOL};

/// Environment variable that replaces `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "VIDEQ_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Corruption {
    /// Frame noise level (fraction of the intensity range) when frames are
    /// rendered; otherwise track noise with std `level * marker size` px.
    pub noise_level: f64,
    pub block_rate: f64,
    pub fiber_rate: f64,
    /// Draw occlusions independently per camera instead of once per scene.
    pub per_camera_occlusion: bool,
}

impl Default for Corruption {
    fn default() -> Self {
        Self {
            noise_level: 0.0,
            block_rate: 0.0,
            fiber_rate: 0.0,
            per_camera_occlusion: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Noise,
    Block,
    Fiber,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Noise => "noise",
            SweepAxis::Block => "block",
            SweepAxis::Fiber => "fiber",
        }
    }

    pub fn get(self, c: &Corruption) -> f64 {
        match self {
            SweepAxis::Noise => c.noise_level,
            SweepAxis::Block => c.block_rate,
            SweepAxis::Fiber => c.fiber_rate,
        }
    }

    fn set(self, c: &mut Corruption, v: f64) {
        match self {
            SweepAxis::Noise => c.noise_level = v,
            SweepAxis::Block => c.block_rate = v,
            SweepAxis::Fiber => c.fiber_rate = v,
        }
    }

    pub const ALL: [SweepAxis; 3] = [SweepAxis::Noise, SweepAxis::Block, SweepAxis::Fiber];
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown sweep axis `{s}` (noise, block, fiber)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Label for result rows; defaults to the system name.
    pub case: Option<String>,
    pub scene: SceneConfig,
    pub corruption: Corruption,
    /// Render frames and track them instead of using projected tracks.
    pub use_frames: bool,
    pub track_tolerance: f64,
    pub reconstruction: OptimizerConfig,
    pub discovery: DiscoveryConfig,
    pub trials: usize,
    pub seed_base: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            case: None,
            scene: SceneConfig::new("SprottF", [10.0, 10.0, 10.0], 0),
            corruption: Corruption::default(),
            use_frames: false,
            track_tolerance: DEFAULT_TOL,
            reconstruction: OptimizerConfig::default(),
            discovery: DiscoveryConfig::default(),
            trials: 5,
            seed_base: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Parse JSON on top of the defaults, apply dotted overrides and the output-dir environment
    /// variable, then validate.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let user: serde_json::Value = serde_json::from_str(text)?;
        let mut doc = serde_json::to_value(Self::default())?;
        merge(&mut doc, user);
        apply_overrides(&mut doc, overrides)?;
        let mut cfg: Self = serde_json::from_value(doc)?;
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                cfg.output_dir = PathBuf::from(dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        Self::from_json(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Validation("trials must be >= 1".into()));
        }
        self.scene.validate()?;
        self.scene.system.resolve()?;
        self.discovery.validate()?;
        let c = &self.corruption;
        for (name, v) in [("noise_level", c.noise_level), ("block_rate", c.block_rate), ("fiber_rate", c.fiber_rate)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.track_tolerance >= 0.0) {
            return Err(Error::Validation("track_tolerance must be >= 0".into()));
        }
        Ok(())
    }

    pub fn case_name(&self) -> String {
        self.case.clone().unwrap_or_else(|| self.scene.system.name.clone())
    }

    /// Condition label and rate for result rows.
    pub fn condition(&self) -> (String, f64) {
        let active: Vec<SweepAxis> = SweepAxis::ALL
            .into_iter()
            .filter(|a| a.get(&self.corruption) > 0.0)
            .collect();
        match active.as_slice() {
            [] => ("none".into(), 0.0),
            [a] => (a.name().into(), a.get(&self.corruption)),
            many => (
                many.iter().map(|a| a.name()).collect::<Vec<_>>().join("+"),
                0.0,
            ),
        }
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.seed_base.wrapping_add(trial as u64)
    }
}

/// Recursively overlay `top` onto `base`; objects merge, anything else
/// replaces.
fn merge(base: &mut serde_json::Value, top: serde_json::Value) {
    match (base, top) {
        (serde_json::Value::Object(b), serde_json::Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Everything one trial produces.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trial: usize,
    pub seed: u64,
    pub scene: Scene,
    pub tracks: Vec<PixelTrack>,
    pub rig: RigEstimate,
    pub reconstruction: Reconstruction,
    pub discovery: DiscoveryResult,
    pub score: DiscoveryScore,
    /// Discovered field integrated from the first true state; `None` if it
    /// diverged.
    pub simulated: Option<Trajectory>,
}

/// Occlusion mask of one scene (or one camera).
fn occlusion(n: usize, c: &Corruption, seed: u64) -> Result<ValidityMask> {
    let mut m = ValidityMask::all_valid(n);
    if c.block_rate > 0.0 {
        m = apply_block_missing(&m, c.block_rate, derive_seed(seed, 0xB10C))?;
    }
    if c.fiber_rate > 0.0 {
        m = apply_fiber_missing(&m, c.fiber_rate, derive_seed(seed, 0xF1BE))?;
    }
    Ok(m)
}

/// Observed pixel tracks after occlusion and noise.
pub fn observe(scene: &Scene, config: &ExperimentConfig, seed: u64) -> Result<Vec<PixelTrack>> {
    let c = &config.corruption;
    let n = scene.truth.len();
    let shared = occlusion(n, c, seed)?;
    scene
        .tracks
        .iter()
        .enumerate()
        .map(|(k, track)| {
            let cam_seed = derive_seed(seed, 0xCA0 + k as u64);
            let mask = if c.per_camera_occlusion {
                occlusion(n, c, cam_seed)?
            } else {
                shared.clone()
            };
            let visible = track.with_mask(&mask)?;
            if config.use_frames {
                let render = RenderConfig {
                    image_size: scene.cameras[k].image_size,
                    background: Background::pick(cam_seed),
                    seed: cam_seed,
                };
                render_and_track(&visible, &config.scene.marker, &render, c.noise_level, config.track_tolerance)
            } else {
                let std_px = c.noise_level * config.scene.marker.size_px;
                apply_track_noise(&visible, std_px, derive_seed(cam_seed, 0x7A), config.scene.quantize)
            }
        })
        .collect()
}

/// Run the full pipeline once with `seed`.
pub fn run_trial(config: &ExperimentConfig, trial: usize) -> Result<TrialOutcome> {
    let seed = config.trial_seed(trial);
    let scene_cfg = SceneConfig {
        seed,
        ..config.scene.clone()
    };
    let system = scene_cfg.system.resolve()?;
    let scene = generate_scene(&scene_cfg)?;
    let tracks = observe(&scene, config, seed)?;
    let rig = fit_camera_params(&tracks, &scene.cameras, &config.reconstruction)?;
    let reconstruction = reconstruct_3d(&tracks, &rig, &scene.cameras, scene_cfg.fps)?;
    let disc_cfg = DiscoveryConfig {
        seed: derive_seed(seed, 0xD15C),
        ..config.discovery.clone()
    };
    let discovery = ado_fit(&reconstruction.trajectory, &reconstruction.mask, &disc_cfg)?;
    let truth = shift_truth_coefficients(&system, scene_cfg.ref_offset);
    let score = score(&discovery.coefficients, &truth)?;
    let simulated = simulate_discovered(
        &discovery.coefficients,
        scene.truth.x[0],
        1.0 / scene_cfg.fps,
        scene.truth.len() - 1,
    )
    .ok();
    Ok(TrialOutcome {
        trial,
        seed,
        scene,
        tracks,
        rig,
        reconstruction,
        discovery,
        score,
        simulated,
    })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub case: String,
    pub condition: String,
    pub rate: f64,
    pub noise_kind: String,
    pub trials: usize,
    pub succeeded: usize,
    pub l2: Stat,
    pub fp: Stat,
    pub precision: Stat,
    pub recall: Stat,
    pub terms_found_fraction: f64,
    pub failures: Vec<TrialFailure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub rows: Vec<ScoreRow>,
    pub summary: Summary,
}

impl ExperimentReport {
    /// 0 when every trial succeeded, 2 when none did, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.summary.succeeded {
            0 => 2,
            n if n == self.summary.trials => 0,
            _ => 3,
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(f, value)?;
    Ok(())
}

fn write_trial(dir: &Path, out: &TrialOutcome, config: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let report = serde_json::json!({
        "trial": out.trial,
        "seed": out.seed,
        "score": out.score,
        "rig": out.rig,
        "discovery": out.discovery.report(&config.discovery),
    });
    write_json(&dir.join("report.json"), &report)?;
    out.reconstruction
        .write_csv(BufWriter::new(fs::File::create(dir.join("reconstruction.csv"))?))?;
    if let Some(sim) = &out.simulated {
        write_overlay(&dir.join("overlay.csv"), &out.scene.truth, sim)?;
    }
    Ok(())
}

/// Name of the per-trial output directory.
pub fn trial_dir_name(trial: usize) -> String {
    format!("trial_{trial:03}")
}

/// Run every trial (in parallel), then write per-trial reports,
/// `results.csv` and `summary.json` under `config.output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let outcomes: Vec<Result<TrialOutcome>> = (0..config.trials).into_par_iter().map(|k| run_trial(config, k)).collect();
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;
    write_json(&dir.join("config.json"), config)?;
    let case = config.case_name();
    let (condition, rate) = config.condition();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (k, o) in outcomes.iter().enumerate() {
        match o {
            Ok(out) => {
                write_trial(&dir.join(trial_dir_name(k)), out, config)?;
                rows.push(ScoreRow::new(&case, &condition, rate, k, out.seed, &out.score));
            }
            Err(e) => failures.push(TrialFailure {
                trial: k,
                seed: config.trial_seed(k),
                error: e.to_string(),
            }),
        }
    }
    write_results_csv(&rows, BufWriter::new(fs::File::create(dir.join("results.csv"))?))?;
    let col = |f: fn(&ScoreRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let summary = Summary {
        case,
        condition,
        rate,
        noise_kind: if config.use_frames { "frame" } else { "track" }.into(),
        trials: config.trials,
        succeeded: rows.len(),
        l2: Stat::of(&col(|r| r.l2)),
        fp: Stat::of(&col(|r| r.fp as f64)),
        precision: Stat::of(&col(|r| r.precision)),
        recall: Stat::of(&col(|r| r.recall)),
        terms_found_fraction: if rows.is_empty() {
            0.0
        } else {
            rows.iter().filter(|r| r.terms_found).count() as f64 / rows.len() as f64
        },
        failures,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(ExperimentReport { rows, summary })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub points: Vec<(f64, ExperimentReport)>,
}

impl SweepReport {
    pub fn exit_code(&self) -> i32 {
        let ok: usize = self.points.iter().map(|p| p.1.summary.succeeded).sum();
        let total: usize = self.points.iter().map(|p| p.1.summary.trials).sum();
        match ok {
            0 => 2,
            n if n == total => 0,
            _ => 3,
        }
    }
}

pub const SWEEP_HEADER: &str = "axis,value,trials,succeeded,l2_mean,l2_std,fp_mean,fp_std";

/// One experiment per value of `axis`, each in its own subdirectory, plus
/// `sweep.csv` (per-value mean/std) and a combined `results.csv`.
pub fn run_sweep(config: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<SweepReport> {
    config.validate()?;
    if values.is_empty() {
        return Err(Error::Validation("sweep needs at least one value".into()));
    }
    if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::Validation("sweep values must be finite and >= 0".into()));
    }
    if values.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Validation("sweep values must be sorted ascending".into()));
    }
    for other in SweepAxis::ALL.into_iter().filter(|a| *a != axis) {
        if other.get(&config.corruption) != 0.0 {
            return Err(Error::Validation(format!(
                "sweeping {} requires {} to be 0",
                axis.name(),
                other.name()
            )));
        }
    }
    let root = &config.output_dir;
    let mut points = Vec::new();
    for &v in values {
        let mut cfg = config.clone();
        axis.set(&mut cfg.corruption, v);
        cfg.output_dir = root.join(format!("{}_{v}", axis.name()));
        let report = run_experiment(&cfg)?;
        points.push((v, report));
    }
    fs::create_dir_all(root)?;
    let mut text = format!("{SWEEP_HEADER}\n");
    for (v, r) in &points {
        let s = &r.summary;
        text.push_str(&format!(
            "{},{v},{},{},{:e},{:e},{},{}\n",
            axis.name(),
            s.trials,
            s.succeeded,
            s.l2.mean,
            s.l2.std,
            s.fp.mean,
            s.fp.std
        ));
    }
    fs::write(root.join("sweep.csv"), text)?;
    let all: Vec<ScoreRow> = points
        .iter()
        .flat_map(|p| p.1.rows.iter().cloned())
        .map(|mut r| {
            // label rows by the swept axis even at value 0
            r.condition = axis.name().into();
            r
        })
        .collect();
    write_results_csv(&all, BufWriter::new(fs::File::create(root.join("results.csv"))?))?;
    Ok(SweepReport { axis, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.scene.duration = 12.0;
        cfg.trials = 2;
        cfg.output_dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn conditions_and_axes() {
        let mut cfg = ExperimentConfig::default();
        assert_eq!(cfg.condition(), ("none".to_string(), 0.0));
        cfg.corruption.block_rate = 0.2;
        assert_eq!(cfg.condition(), ("block".to_string(), 0.2));
        cfg.corruption.noise_level = 0.1;
        assert_eq!(cfg.condition().0, "noise+block");
        assert_eq!("fiber".parse::<SweepAxis>().unwrap(), SweepAxis::Fiber);
        assert!("snow".parse::<SweepAxis>().is_err());
    }

    #[test]
    fn parse_with_overrides() {
        let cfg = ExperimentConfig::from_json(
            r#"{"scene": {"system": {"name": "Lorenz"}}, "trials": 3}"#,
            &["corruption.noise_level=0.1".into(), "trials=1".into()],
        )
        .unwrap();
        assert_eq!(cfg.scene.system.name, "Lorenz");
        assert_eq!(cfg.corruption.noise_level, 0.1);
        assert_eq!(cfg.trials, 1);
        let bad = ExperimentConfig::from_json(r#"{"scene": {"system": {"name": "Nope"}}}"#, &[]);
        assert!(matches!(bad, Err(Error::Catalog(_))));
        let partial = ExperimentConfig::from_json("{}", &["scene.duration=10".into()]).unwrap();
        assert_eq!(partial.scene.system.name, "SprottF");
        assert_eq!(partial.scene.duration, 10.0);
        let zero = ExperimentConfig::from_json(r#"{"trials": 0}"#, &[]);
        assert!(matches!(zero, Err(Error::Validation(_))));
    }

    #[test]
    fn stat_of_values() {
        let s = Stat::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert_eq!(Stat::of(&[4.0]).std, 0.0);
    }

    #[test]
    fn experiment_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = run_experiment(&small(a.path())).unwrap();
        let rb = run_experiment(&small(b.path())).unwrap();
        assert_eq!(ra.exit_code(), 0);
        assert_eq!(ra.rows, rb.rows);
        for f in ["results.csv", "summary.json", "trial_000/report.json", "trial_001/overlay.csv"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        assert_eq!(ra.rows[0].seed, 0);
        assert_eq!(ra.rows[1].seed, 1);
    }

    #[test]
    fn sweep_rejects_bad_values() {
        let d = tempfile::tempdir().unwrap();
        let cfg = small(d.path());
        assert!(run_sweep(&cfg, SweepAxis::Noise, &[]).is_err());
        assert!(run_sweep(&cfg, SweepAxis::Noise, &[0.2, 0.1]).is_err());
        let mut mixed = cfg.clone();
        mixed.corruption.block_rate = 0.1;
        assert!(run_sweep(&mixed, SweepAxis::Noise, &[0.0]).is_err());
    }
}
