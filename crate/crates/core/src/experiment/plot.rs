//! Plot-ready CSVs from experiment or sweep output directories.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::dynamics::{fmt17, Trajectory};
use crate::error::{Error, Result};
use crate::metrics::{read_results_csv, write_results_csv};

pub const OVERLAY_HEADER: &str = "t,x_true,y_true,z_true,x_disc,y_disc,z_disc";

/// Truth and discovered trajectories side by side, truncated to the shorter.
pub fn write_overlay(path: &Path, truth: &Trajectory, discovered: &Trajectory) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{OVERLAY_HEADER}")?;
    for i in 0..truth.len().min(discovered.len()) {
        let (a, b) = (truth.x[i], discovered.x[i]);
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            fmt17(truth.t[i]),
            fmt17(a[0]),
            fmt17(a[1]),
            fmt17(a[2]),
            fmt17(b[0]),
            fmt17(b[1]),
            fmt17(b[2])
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlotFiles {
    pub scores: PathBuf,
    pub trajectories: PathBuf,
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

/// First `overlay.csv` in a trial directory of `dir` or of its
/// subdirectories (sweeps), in sorted order.
fn find_overlay(dir: &Path) -> Result<Option<PathBuf>> {
    for sub in sorted_subdirs(dir)? {
        let direct = sub.join("overlay.csv");
        if direct.is_file() {
            return Ok(Some(direct));
        }
        for trial in sorted_subdirs(&sub)? {
            let nested = trial.join("overlay.csv");
            if nested.is_file() {
                return Ok(Some(nested));
            }
        }
    }
    Ok(None)
}

/// Write `plot/scores.csv` (one row per trial) and `plot/trajectories.csv`
/// (truth vs discovered overlay of the first available trial) under `dir`.
pub fn emit_plot_data(dir: &Path) -> Result<PlotFiles> {
    let results = dir.join("results.csv");
    if !results.is_file() {
        return Err(Error::MissingFile(results));
    }
    let rows = read_results_csv(fs::File::open(&results)?).map_err(|e| match e {
        Error::Parse { msg, .. } => Error::Parse {
            path: results.clone(),
            msg,
        },
        other => other,
    })?;
    let out = dir.join("plot");
    fs::create_dir_all(&out)?;
    let scores = out.join("scores.csv");
    write_results_csv(&rows, BufWriter::new(fs::File::create(&scores)?))?;
    let trajectories = out.join("trajectories.csv");
    match find_overlay(dir)? {
        Some(p) => {
            fs::copy(p, &trajectories)?;
        }
        None => fs::write(&trajectories, format!("{OVERLAY_HEADER}\n"))?,
    }
    Ok(PlotFiles { scores, trajectories })
}
