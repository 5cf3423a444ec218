//! A small noise sweep over the full pipeline, written to a temporary
//! directory.

use videq::experiment::{emit_plot_data, run_sweep, ExperimentConfig, SweepAxis};

fn main() -> videq::Result<()> {
    let dir = std::env::temp_dir().join("videq-noise-sweep");
    let cfg = ExperimentConfig {
        trials: 2,
        output_dir: dir.clone(),
        ..ExperimentConfig::default()
    };

    let report = run_sweep(&cfg, SweepAxis::Noise, &[0.0, 0.1, 0.2])?;
    for (level, r) in &report.points {
        let s = &r.summary;
        println!(
            "noise {level:.2}: recall {:.1}%, fp {:.2}, l2 {:.2e} +- {:.1e}",
            s.recall.mean, s.fp.mean, s.l2.mean, s.l2.std
        );
    }
    let files = emit_plot_data(&dir)?;
    println!("plot data: {} and {}", files.scores.display(), files.trajectories.display());
    Ok(())
}
