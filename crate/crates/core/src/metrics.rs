//! Scoring of discovered coefficients against ground truth.

use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_field, Trajectory};
use crate::error::{Error, Result};
use crate::poly::{CandidateLibrary, CoefficientMatrix};

/// An entry counts as present when its magnitude exceeds this.
pub const SUPPORT_TOL: f64 = 1e-8;

/// `|id - truth|_F / |truth|_F`.
pub fn l2_coeff_error(id: &CoefficientMatrix, truth: &CoefficientMatrix) -> Result<f64> {
    check_shapes(id, truth)?;
    let norm = truth.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::UndefinedError);
    }
    let mut se = 0.0;
    for (a, b) in id.values.iter().zip(&truth.values) {
        for d in 0..3 {
            se += (a[d] - b[d]).powi(2);
        }
    }
    Ok(se.sqrt() / norm)
}

/// Secondary per-entry error `max |id - truth| / max(|truth|, 1)`.
pub fn max_normalized_error(id: &CoefficientMatrix, truth: &CoefficientMatrix) -> Result<f64> {
    check_shapes(id, truth)?;
    let mut worst: f64 = 0.0;
    for (a, b) in id.values.iter().zip(&truth.values) {
        for d in 0..3 {
            worst = worst.max((a[d] - b[d]).abs() / b[d].abs().max(1.0));
        }
    }
    Ok(worst)
}

fn check_shapes(a: &CoefficientMatrix, b: &CoefficientMatrix) -> Result<()> {
    if a.n_terms() != b.n_terms() {
        return Err(Error::Size(format!("{} vs {} library terms", a.n_terms(), b.n_terms())));
    }
    Ok(())
}

/// Support overlap counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupportCounts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

pub fn support_counts(id: &CoefficientMatrix, truth: &CoefficientMatrix) -> Result<SupportCounts> {
    check_shapes(id, truth)?;
    let mut c = SupportCounts {
        true_positives: 0,
        false_positives: 0,
        false_negatives: 0,
    };
    for (a, b) in id.support_with_tol(SUPPORT_TOL).iter().zip(truth.support_with_tol(SUPPORT_TOL)) {
        for d in 0..3 {
            match (a[d], b[d]) {
                (true, true) => c.true_positives += 1,
                (true, false) => c.false_positives += 1,
                (false, true) => c.false_negatives += 1,
                (false, false) => {}
            }
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    /// Percent.
    pub precision: f64,
    /// Percent.
    pub recall: f64,
    /// The identified matrix has no nonzero entry; precision is reported as 0.
    pub empty_support: bool,
}

pub fn precision_recall(id: &CoefficientMatrix, truth: &CoefficientMatrix) -> Result<PrecisionRecall> {
    let c = support_counts(id, truth)?;
    let found = c.true_positives + c.false_positives;
    let actual = c.true_positives + c.false_negatives;
    let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
    Ok(PrecisionRecall {
        precision: pct(c.true_positives, found),
        recall: if actual == 0 { 100.0 } else { pct(c.true_positives, actual) },
        empty_support: found == 0,
    })
}

pub fn false_positives(id: &CoefficientMatrix, truth: &CoefficientMatrix) -> Result<usize> {
    Ok(support_counts(id, truth)?.false_positives)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryScore {
    pub terms_found: bool,
    pub false_positives: usize,
    pub l2_error: f64,
    pub precision: f64,
    pub recall: f64,
    /// See [`max_normalized_error`].
    pub max_normalized_error: f64,
}

pub fn score(id: &CoefficientMatrix, truth: &CoefficientMatrix) -> Result<DiscoveryScore> {
    let pr = precision_recall(id, truth)?;
    Ok(DiscoveryScore {
        terms_found: pr.recall == 100.0,
        false_positives: false_positives(id, truth)?,
        l2_error: l2_coeff_error(id, truth)?,
        precision: pr.precision,
        recall: pr.recall,
        max_normalized_error: max_normalized_error(id, truth)?,
    })
}

/// RK4 on the polynomial field `lambda`, with the same internal substepping
/// as the simulator.
pub fn simulate_discovered(lambda: &CoefficientMatrix, x0: [f64; 3], dt: f64, n_steps: usize) -> Result<Trajectory> {
    let lib = CandidateLibrary::cubic();
    integrate_field(
        |s| lambda.eval(&lib, s),
        x0,
        dt,
        n_steps,
        crate::dynamics::auto_substeps(dt),
    )
}

/// Intersection over union of the axis-aligned bounding boxes of two
/// trajectories.
pub fn bounding_box_overlap(a: &Trajectory, b: &Trajectory) -> f64 {
    let (alo, ahi) = a.bounding_box();
    let (blo, bhi) = b.bounding_box();
    let vol = |lo: [f64; 3], hi: [f64; 3]| (0..3).map(|d| (hi[d] - lo[d]).max(0.0)).product::<f64>();
    let ilo = [0, 1, 2].map(|d| alo[d].max(blo[d]));
    let ihi = [0, 1, 2].map(|d| ahi[d].min(bhi[d]));
    let inter = vol(ilo, ihi);
    let union = vol(alo, ahi) + vol(blo, bhi) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub case: String,
    pub condition: String,
    pub rate: f64,
    pub trial: usize,
    pub terms_found: bool,
    pub fp: usize,
    pub l2: f64,
    pub precision: f64,
    pub recall: f64,
    pub seed: u64,
}

impl ScoreRow {
    pub const HEADER: &'static str = "case,condition,rate,trial,terms_found,fp,l2,precision,recall,seed";

    pub fn new(case: &str, condition: &str, rate: f64, trial: usize, seed: u64, s: &DiscoveryScore) -> Self {
        Self {
            case: case.to_string(),
            condition: condition.to_string(),
            rate,
            trial,
            terms_found: s.terms_found,
            fp: s.false_positives,
            l2: s.l2_error,
            precision: s.precision,
            recall: s.recall,
            seed,
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:e},{},{},{}",
            self.case,
            self.condition,
            self.rate,
            self.trial,
            u8::from(self.terms_found),
            self.fp,
            self.l2,
            self.precision,
            self.recall,
            self.seed
        )
    }
}

pub fn write_results_csv<W: Write>(rows: &[ScoreRow], mut w: W) -> Result<()> {
    writeln!(w, "{}", ScoreRow::HEADER)?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}

pub fn read_results_csv<R: Read>(r: R) -> Result<Vec<ScoreRow>> {
    let bad = |msg: String| Error::Parse {
        path: "results.csv".into(),
        msg,
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(bad(format!("line {}: expected 10 fields, got {}", i + 1, f.len())));
        }
        let num = |k: usize| f[k].trim().parse::<f64>().map_err(|e| bad(format!("line {}: {e}", i + 1)));
        let int = |k: usize| f[k].trim().parse::<u64>().map_err(|e| bad(format!("line {}: {e}", i + 1)));
        out.push(ScoreRow {
            case: f[0].to_string(),
            condition: f[1].to_string(),
            rate: num(2)?,
            trial: int(3)? as usize,
            terms_found: int(4)? != 0,
            fp: int(5)? as usize,
            l2: num(6)?,
            precision: num(7)?,
            recall: num(8)?,
            seed: int(9)?,
        });
    }
    Ok(out)
}
