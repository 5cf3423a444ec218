use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use videq::discovery::{ado_fit, DiscoveryConfig, DiscoveryResult};
use videq::dynamics::{shift_truth_coefficients, SystemSpec};
use videq::experiment::{apply_overrides, emit_plot_data, observe, run_experiment, run_sweep, ExperimentConfig, SweepAxis};
use videq::geometry::CameraModel;
use videq::metrics::score;
use videq::reconstruction::{fit_camera_params, reconstruct_3d, OptimizerConfig};
use videq::synth::{
    apply_noise_frame, derive_seed, generate_scene, render_frames, write_container, Background, RenderConfig, SceneConfig,
};
use videq::tracking::{track_sequence, PixelTrack, DEFAULT_TOL};
use videq::{CandidateLibrary, CoefficientMatrix, Error};

#[derive(Parser)]
#[command(name = "videq", version, about = "Governing equations of a 3D target from three camera tracks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scene and write truth, cameras and observed tracks.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set")]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        /// Trial index used to derive the seed.
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// Also render frame containers (one per camera).
        #[arg(long)]
        frames: bool,
    },
    /// Track the marker in a frame container.
    Track {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_color, default_value = "255,40,40")]
        color: [u8; 3],
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
    /// Learn the rig from three tracks and triangulate.
    Reconstruct {
        #[arg(long)]
        cameras: PathBuf,
        #[arg(long, num_args = 3)]
        tracks: Vec<PathBuf>,
        #[arg(long, default_value_t = 25.0)]
        fps: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Discover equations from a reconstruction CSV.
    Discover {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set")]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a discovery report against a catalog system.
    Score {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        system: String,
        #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
        offset: [f64; 3],
    },
    /// Full pipeline over all trials.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set")]
        set: Vec<String>,
    },
    /// One experiment per value of a corruption axis.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set")]
        set: Vec<String>,
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Tidy CSVs for plotting from a run or sweep directory.
    PlotData {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn parse_color(s: &str) -> Result<[u8; 3], String> {
    let v: Vec<u8> = s.split(',').map(|p| p.trim().parse::<u8>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    v.try_into().map_err(|_| "expected r,g,b".to_string())
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    v.try_into().map_err(|_| "expected x,y,z".to_string())
}

fn load_experiment(config: Option<&Path>, set: &[String]) -> videq::Result<ExperimentConfig> {
    match config {
        Some(p) => ExperimentConfig::load(p, set),
        None => ExperimentConfig::from_json("{}", set),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> videq::Result<()> {
    serde_json::to_writer_pretty(BufWriter::new(fs::File::create(path)?), v)?;
    Ok(())
}

fn generate(config: Option<&Path>, set: &[String], out: &Path, trial: usize, frames: bool) -> videq::Result<()> {
    let cfg = load_experiment(config, set)?;
    let seed = cfg.trial_seed(trial);
    let scene_cfg = SceneConfig {
        seed,
        ..cfg.scene.clone()
    };
    let scene = generate_scene(&scene_cfg)?;
    let tracks = observe(&scene, &ExperimentConfig { use_frames: false, ..cfg.clone() }, seed)?;
    fs::create_dir_all(out)?;
    scene.truth.write_csv(BufWriter::new(fs::File::create(out.join("truth.csv"))?))?;
    write_json(&out.join("cameras.json"), &scene.cameras)?;
    let mut files = vec!["truth.csv".to_string(), "cameras.json".to_string()];
    for (k, t) in tracks.iter().enumerate() {
        let name = format!("track_{k}.csv");
        t.write_csv(BufWriter::new(fs::File::create(out.join(&name))?))?;
        files.push(name);
    }
    if frames {
        for (k, t) in scene.tracks.iter().enumerate() {
            let visible = t.with_mask(&tracks[k].mask)?;
            let cam_seed = derive_seed(seed, 0xCA0 + k as u64);
            let render = RenderConfig {
                image_size: scene.cameras[k].image_size,
                background: Background::pick(cam_seed),
                seed: cam_seed,
            };
            let noise_seed = derive_seed(cam_seed, 0x4E);
            let seq: Vec<_> = render_frames(&visible, &cfg.scene.marker, &render)
                .iter()
                .enumerate()
                .map(|(i, f)| apply_noise_frame(f, cfg.corruption.noise_level, derive_seed(noise_seed, i as u64)))
                .collect();
            let name = format!("frames_{k}.rgb");
            write_container(&out.join(&name), &seq)?;
            files.push(name);
        }
    }
    write_json(
        &out.join("manifest.json"),
        &serde_json::json!({ "config": cfg, "trial": trial, "seed": seed, "files": files }),
    )?;
    println!("wrote {} frames x {} cameras to {}", scene.truth.len(), scene.cameras.len(), out.display());
    Ok(())
}

fn track(frames: &Path, out: &Path, color: [u8; 3], tol: f64) -> videq::Result<()> {
    let seq = videq::synth::read_container(frames)?;
    let t = track_sequence(&seq, color, tol);
    t.write_csv(BufWriter::new(fs::File::create(out)?))?;
    println!("{} of {} frames detected", t.mask.count_valid(), t.len());
    Ok(())
}

fn read_track(p: &Path) -> videq::Result<PixelTrack> {
    let f = fs::File::open(p).map_err(|_| Error::MissingFile(p.to_path_buf()))?;
    PixelTrack::read_csv(f)
}

fn reconstruct(cameras: &Path, tracks: &[PathBuf], fps: f64, out: &Path) -> videq::Result<()> {
    let cams: Vec<CameraModel> =
        serde_json::from_reader(fs::File::open(cameras).map_err(|_| Error::MissingFile(cameras.to_path_buf()))?)?;
    let tracks = tracks.iter().map(|p| read_track(p)).collect::<videq::Result<Vec<_>>>()?;
    let rig = fit_camera_params(&tracks, &cams, &OptimizerConfig::default())?;
    let rec = reconstruct_3d(&tracks, &rig, &cams, fps)?;
    fs::create_dir_all(out)?;
    rec.write_csv(BufWriter::new(fs::File::create(out.join("reconstruction.csv"))?))?;
    rig.write_json(&cams, BufWriter::new(fs::File::create(out.join("rig.json"))?))?;
    println!("s = {:?}, theta = {:?}, converged = {}", rig.s, rig.theta, rig.converged);
    Ok(())
}

fn discover(input: &Path, config: Option<&Path>, set: &[String], out: &Path) -> videq::Result<()> {
    let mut doc = match config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).map_err(|_| Error::MissingFile(p.to_path_buf()))?)?,
        None => serde_json::to_value(DiscoveryConfig::default())?,
    };
    apply_overrides(&mut doc, set)?;
    let cfg: DiscoveryConfig = serde_json::from_value(doc)?;
    let f = fs::File::open(input).map_err(|_| Error::MissingFile(input.to_path_buf()))?;
    let rec = videq::reconstruction::Reconstruction::read_csv(f)?;
    let result: DiscoveryResult = ado_fit(&rec.trajectory, &rec.mask, &cfg)?;
    write_json(out, &result.report(&cfg))?;
    for line in result.coefficients.render(&CandidateLibrary::cubic()) {
        println!("{line}");
    }
    for w in &result.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn score_report(report: &Path, system: &str, offset: [f64; 3]) -> videq::Result<()> {
    let doc: serde_json::Value =
        serde_json::from_reader(fs::File::open(report).map_err(|_| Error::MissingFile(report.to_path_buf()))?)?;
    // accept both a bare discovery report and a trial report wrapping one
    let table = doc
        .get("discovery")
        .unwrap_or(&doc)
        .get("coefficients")
        .ok_or_else(|| Error::Parse {
            path: report.to_path_buf(),
            msg: "no `coefficients` table".into(),
        })?;
    let lib = CandidateLibrary::cubic();
    let mut id = CoefficientMatrix::zeros(lib.len());
    for (j, label) in lib.labels().iter().enumerate() {
        let row: [f64; 3] = serde_json::from_value(table.get(label).cloned().unwrap_or_default()).map_err(|e| Error::Parse {
            path: report.to_path_buf(),
            msg: format!("term `{label}`: {e}"),
        })?;
        for d in 0..3 {
            id.set(j, d, row[d]);
        }
    }
    let truth = shift_truth_coefficients(&SystemSpec::catalog(system)?, offset);
    println!("{}", serde_json::to_string_pretty(&score(&id, &truth)?)?);
    Ok(())
}

fn exit_for(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::Catalog(_) | Error::Parse { .. } | Error::MissingFile(_) | Error::Json(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: videq::Result<u8> = match &cli.command {
        Command::Generate {
            config,
            set,
            out,
            trial,
            frames,
        } => generate(config.as_deref(), set, out, *trial, *frames).map(|_| 0),
        Command::Track { frames, out, color, tol } => track(frames, out, *color, *tol).map(|_| 0),
        Command::Reconstruct { cameras, tracks, fps, out } => reconstruct(cameras, tracks, *fps, out).map(|_| 0),
        Command::Discover { input, config, set, out } => discover(input, config.as_deref(), set, out).map(|_| 0),
        Command::Score { report, system, offset } => score_report(report, system, *offset).map(|_| 0),
        Command::Run { config, set } => load_experiment(config.as_deref(), set).and_then(|cfg| {
            let r = run_experiment(&cfg)?;
            let s = &r.summary;
            println!(
                "{} {} {}: {}/{} trials, recall {:.2}, fp {:.2}, l2 {:.2e}",
                s.case, s.condition, s.rate, s.succeeded, s.trials, s.recall.mean, s.fp.mean, s.l2.mean
            );
            for f in &s.failures {
                eprintln!("trial {} (seed {}) failed: {}", f.trial, f.seed, f.error);
            }
            Ok(r.exit_code() as u8)
        }),
        Command::Sweep {
            config,
            set,
            axis,
            values,
        } => load_experiment(config.as_deref(), set).and_then(|cfg| {
            let r = run_sweep(&cfg, *axis, values)?;
            for (v, p) in &r.points {
                println!(
                    "{} = {v}: {}/{} trials, fp {:.2}, l2 {:.2e}",
                    axis.name(),
                    p.summary.succeeded,
                    p.summary.trials,
                    p.summary.fp.mean,
                    p.summary.l2.mean
                );
            }
            Ok(r.exit_code() as u8)
        }),
        Command::PlotData { dir } => emit_plot_data(dir).map(|f| {
            println!("{}\n{}", f.scores.display(), f.trajectories.display());
            0
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
