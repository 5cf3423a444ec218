//! Sparse equation discovery on a spline surrogate of the trajectory.
//!
//! The trajectory is represented as `x(t) = G(t) P + offset`. The dynamics
//! `d/dt (G P) = Phi(G P) Lambda` are fitted in coordinates centred on the
//! offset, alternating sparse regression for `Lambda` with a joint refit of
//! everything. The result is finally re-expressed in the measurement frame.

mod losses;
mod refit;
mod stridge;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use losses::{build_library, data_loss, physics_loss};
pub use refit::{LossParts, RefitConfig, RefitMethod};
pub use stridge::{stridge, stridge_adaptive, StridgeResult, ThresholdSchedule};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::poly::{CandidateLibrary, CoefficientMatrix};
use crate::spline::{basis_rows, clamped_knots, fit_control_points, BasisRow, SplineModel};
use crate::synth::{derive_seed, ValidityMask};
use losses::valid_samples;
use refit::{Params, Problem};

/// Fewest control points a fit will use.
pub const MIN_CTRL: usize = 8;

/// How the offset is initialized before pre-training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetInit {
    Mean,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscoveryConfig {
    /// Weight of the physics loss.
    pub alpha: f64,
    /// Collocation count; `None` means ten per valid measurement.
    pub n_collocation: Option<usize>,
    pub ado_iters: usize,
    pub ridge: f64,
    pub threshold_init: f64,
    pub threshold_factor: f64,
    pub threshold_levels: usize,
    pub threshold_tolerance: f64,
    pub final_prune: f64,
    /// Control points per frame of the record.
    pub ctrl_per_sample: f64,
    pub max_ctrl: usize,
    /// Second-difference penalty used by the pre-training fit.
    pub smoothing: f64,
    pub offset_init: OffsetInit,
    pub refit: RefitConfig,
    pub seed: u64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            n_collocation: None,
            ado_iters: 6,
            ridge: 1e-5,
            threshold_init: 0.05,
            threshold_factor: 2.0,
            threshold_levels: 8,
            threshold_tolerance: 1.0,
            final_prune: 0.05,
            ctrl_per_sample: 2.0,
            max_ctrl: 4000,
            smoothing: 1e-4,
            offset_init: OffsetInit::Mean,
            refit: RefitConfig::default(),
            seed: 0,
        }
    }
}

impl DiscoveryConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Validation(format!("{name} must be > 0, got {v}")))
            }
        };
        let non_negative = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Validation(format!("{name} must be >= 0, got {v}")))
            }
        };
        positive("alpha", self.alpha)?;
        positive("threshold_init", self.threshold_init)?;
        positive("ctrl_per_sample", self.ctrl_per_sample)?;
        non_negative("ridge", self.ridge)?;
        non_negative("threshold_tolerance", self.threshold_tolerance)?;
        non_negative("final_prune", self.final_prune)?;
        non_negative("smoothing", self.smoothing)?;
        if !(self.threshold_factor >= 1.0) {
            return Err(Error::Validation("threshold_factor must be >= 1".into()));
        }
        if self.threshold_levels == 0 {
            return Err(Error::Validation("threshold_levels must be >= 1".into()));
        }
        if self.max_ctrl < MIN_CTRL {
            return Err(Error::Validation(format!("max_ctrl must be >= {MIN_CTRL}")));
        }
        Ok(())
    }

    fn schedule(&self) -> ThresholdSchedule {
        ThresholdSchedule {
            initial: self.threshold_init,
            factor: self.threshold_factor,
            levels: self.threshold_levels,
            tolerance: self.threshold_tolerance,
        }
    }
}

/// Support sizes and losses at the end of one alternation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub support: [usize; 3],
    pub thresholds: [f64; 3],
    pub loss: LossParts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_measurements: usize,
    pub n_collocation: usize,
    pub n_ctrl: usize,
    pub domain: [f64; 2],
    /// Total loss after every accepted refit step; phases are separated by
    /// the indices in `phase_starts`.
    pub loss_trace: Vec<LossParts>,
    pub phase_starts: Vec<usize>,
    pub iterations: Vec<IterationSummary>,
    /// Dimensions whose final support is empty.
    pub degenerate: [bool; 3],
    pub refit_converged: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryResult {
    pub model: SplineModel,
    /// Coefficients in coordinates centred on the fitted offset.
    pub lambda_centered: CoefficientMatrix,
    /// Same field in the measurement frame, before pruning.
    pub lambda_reference: CoefficientMatrix,
    /// Pruned measurement-frame coefficients.
    pub coefficients: CoefficientMatrix,
    pub diagnostics: Diagnostics,
}

impl DiscoveryResult {
    pub fn is_degenerate(&self) -> bool {
        self.diagnostics.degenerate.iter().any(|d| *d)
    }

    /// JSON report with labelled coefficients, the loss trace and the config.
    pub fn report(&self, config: &DiscoveryConfig) -> serde_json::Value {
        let lib = CandidateLibrary::cubic();
        let table = |m: &CoefficientMatrix| -> serde_json::Value {
            lib.labels()
                .iter()
                .enumerate()
                .map(|(j, l)| (l.clone(), serde_json::json!(m.values[j])))
                .collect::<serde_json::Map<_, _>>()
                .into()
        };
        serde_json::json!({
            "terms": lib.labels(),
            "equations": self.coefficients.render(&lib),
            "lambda_centered": table(&self.lambda_centered),
            "lambda_reference": table(&self.lambda_reference),
            "coefficients": table(&self.coefficients),
            "offset": self.model.offset,
            "spline": {
                "n_ctrl": self.diagnostics.n_ctrl,
                "domain": self.diagnostics.domain,
                "knots": self.model.knots.knots(),
            },
            "diagnostics": self.diagnostics,
            "config": config,
            "seed": config.seed,
        })
    }
}

/// Express a field fitted in offset-centred coordinates in the frame the
/// data was measured in: `dx/dt = Phi(x - offset) Lambda`.
pub fn remove_offset(lambda: &CoefficientMatrix, offset: [f64; 3]) -> CoefficientMatrix {
    lambda.substitute_shift(&CandidateLibrary::cubic(), offset)
}

/// Zero entries with `|value| < tol`; no refit.
pub fn prune_small(lambda: &CoefficientMatrix, tol: f64) -> CoefficientMatrix {
    lambda.pruned(tol)
}

/// Control-point count for `n_frames` samples.
pub fn default_n_ctrl(n_frames: usize, config: &DiscoveryConfig) -> usize {
    ((n_frames as f64 * config.ctrl_per_sample).round() as usize).clamp(MIN_CTRL, config.max_ctrl)
}

/// Collocation times at which the spline is pinned by measurements on both
/// sides within `reach`.
fn covered(times: &[f64], valid_t: &[f64], reach: f64) -> Vec<usize> {
    times
        .iter()
        .enumerate()
        .filter(|(_, &t)| {
            let k = valid_t.partition_point(|v| *v < t);
            let after = valid_t.get(k).is_some_and(|v| v - t <= reach);
            let before = k > 0 && t - valid_t[k - 1] <= reach;
            after && (before || valid_t[k] == t)
        })
        .map(|(i, _)| i)
        .collect()
}

/// One sparse regression pass per dimension on the current curve. Columns
/// outside `allowed` are excluded.
fn sparse_pass(
    control: &[[f64; 3]],
    rows: &[BasisRow],
    drows: &[BasisRow],
    allowed: &[[bool; 3]],
    config: &DiscoveryConfig,
) -> (CoefficientMatrix, [f64; 3]) {
    let states: Vec<[f64; 3]> = rows.iter().map(|r| r.dot(control)).collect();
    let rates: Vec<[f64; 3]> = drows.iter().map(|r| r.dot(control)).collect();
    let phi = build_library(&states);
    let schedule = config.schedule();
    let fits: Vec<StridgeResult> = (0..3)
        .into_par_iter()
        .map(|d| {
            let mut phi_d = phi.clone();
            for (j, a) in allowed.iter().enumerate() {
                if !a[d] {
                    phi_d.column_mut(j).fill(0.0);
                }
            }
            let y = DVector::from_iterator(rates.len(), rates.iter().map(|r| r[d]));
            stridge_adaptive(&phi_d, &y, config.ridge, &schedule)
        })
        .collect();
    let mut lambda = CoefficientMatrix::zeros(phi.ncols());
    for (d, f) in fits.iter().enumerate() {
        lambda.set_column(d, &f.coef);
    }
    (lambda, [fits[0].threshold, fits[1].threshold, fits[2].threshold])
}

/// Spline-based sparse identification of `dx/dt = f(x)` from a possibly
/// gappy trajectory.
///
/// Pre-training fits the spline to the data alone. Each alternation then
/// runs a thresholded sparse regression on the current curve and a joint
/// refit of control points, offset and surviving coefficients.
pub fn ado_fit(data: &Trajectory, mask: &ValidityMask, config: &DiscoveryConfig) -> Result<DiscoveryResult> {
    config.validate()?;
    let (t, x) = valid_samples(data, mask)?;
    let lib = CandidateLibrary::cubic();
    let needed = lib.len().max(MIN_CTRL);
    if t.len() < needed {
        return Err(Error::InsufficientData {
            needed,
            found: t.len(),
        });
    }
    let t0 = data.t[0];
    let t1 = data.t[data.len() - 1];
    if !(t1 > t0) {
        return Err(Error::Validation("trajectory spans no time".into()));
    }
    let n_m = t.len();
    let n_c = config.n_collocation.unwrap_or(10 * n_m);
    if n_c < 5 * n_m {
        return Err(Error::Validation(format!(
            "need at least {} collocation points for {n_m} measurements, got {n_c}",
            5 * n_m
        )));
    }
    let n_ctrl = default_n_ctrl(data.len(), config);
    let mut warnings = Vec::new();
    if n_m < n_ctrl {
        warnings.push(format!("{n_m} valid samples for {n_ctrl} control points"));
    }

    let knots = clamped_knots(n_ctrl, t0, t1)?;
    let (data_rows, _) = basis_rows(&knots, &t)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0xC0));
    let mut colloc: Vec<f64> = (0..n_c).map(|_| rng.random_range(t0..=t1)).collect();
    colloc.sort_by(f64::total_cmp);
    let (col_rows, col_drows) = basis_rows(&knots, &colloc)?;

    let frame_dt = (t1 - t0) / (data.len() - 1).max(1) as f64;
    let keep = covered(&colloc, &t, 2.0 * frame_dt + 1e-12);
    if keep.len() < lib.len() {
        return Err(Error::InsufficientData {
            needed: lib.len(),
            found: keep.len(),
        });
    }
    let sr_rows: Vec<BasisRow> = keep.iter().map(|&i| col_rows[i]).collect();
    let sr_drows: Vec<BasisRow> = keep.iter().map(|&i| col_drows[i]).collect();

    let offset = match config.offset_init {
        OffsetInit::Zero => [0.0; 3],
        OffsetInit::Mean => {
            let mut m = [0.0; 3];
            for v in &x {
                for d in 0..3 {
                    m[d] += v[d] / n_m as f64;
                }
            }
            m
        }
    };
    let centred: Vec<[f64; 3]> = x.iter().map(|v| [v[0] - offset[0], v[1] - offset[1], v[2] - offset[2]]).collect();
    let control = fit_control_points(&knots, &data_rows, &centred, &vec![1.0; n_m], config.smoothing)?;

    let problem = Problem {
        data_rows: &data_rows,
        data_values: &x,
        col_rows: &col_rows,
        col_drows: &col_drows,
        alpha: config.alpha,
    };
    let mut params = Params {
        control,
        offset,
        lambda: CoefficientMatrix::zeros(lib.len()),
    };
    let mut allowed = vec![[true; 3]; lib.len()];
    let mut loss_trace = Vec::new();
    let mut phase_starts = Vec::new();
    let mut iterations = Vec::new();
    let mut refit_converged = true;

    for _ in 0..config.ado_iters {
        let (lambda, thresholds) = sparse_pass(&params.control, &sr_rows, &sr_drows, &allowed, config);
        allowed = lambda.support();
        params.lambda = lambda;
        phase_starts.push(loss_trace.len());
        let out = refit::refit(&problem, params, &config.refit);
        refit_converged &= out.converged;
        params = out.params;
        let last = *out.trace.last().expect("trace holds the starting loss");
        loss_trace.extend(out.trace);
        let support = [0, 1, 2].map(|d| allowed.iter().filter(|a| a[d]).count());
        iterations.push(IterationSummary {
            support,
            thresholds,
            loss: last,
        });
    }
    if !refit_converged {
        warnings.push("refit stopped at the iteration limit; returning the best iterate".into());
    }

    // refit keeps zeros out of the support; restore exact zeros off-support
    let mut lambda_centered = params.lambda.clone();
    for (j, a) in allowed.iter().enumerate() {
        for d in 0..3 {
            if !a[d] {
                lambda_centered.set(j, d, 0.0);
            }
        }
    }
    let lambda_reference = remove_offset(&lambda_centered, params.offset);
    let coefficients = prune_small(&lambda_reference, config.final_prune);
    let degenerate = [0, 1, 2].map(|d| coefficients.column(d).iter().all(|v| *v == 0.0));
    if degenerate.iter().any(|d| *d) {
        warnings.push(format!("empty support in dimensions {degenerate:?}"));
    }
    let model = SplineModel::new(knots, params.control, params.offset)?;
    Ok(DiscoveryResult {
        model,
        lambda_centered,
        lambda_reference,
        coefficients,
        diagnostics: Diagnostics {
            n_measurements: n_m,
            n_collocation: n_c,
            n_ctrl,
            domain: [t0, t1],
            loss_trace,
            phase_starts,
            iterations,
            degenerate,
            refit_converged,
            warnings,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate_rk4, shift_truth_coefficients, SystemSpec};

    fn sample(name: &str, dt: f64, n: usize, shift: [f64; 3]) -> (SystemSpec, Trajectory) {
        let sys = SystemSpec::catalog(name).unwrap();
        let traj = integrate_rk4(&sys, sys.x0, dt, n).unwrap();
        (sys, traj.shifted(shift))
    }

    fn support_of(m: &CoefficientMatrix) -> Vec<[bool; 3]> {
        m.support_with_tol(1e-8)
    }

    #[test]
    fn constant_data_gives_zero_field() {
        let data = Trajectory {
            t: (0..200).map(|i| i as f64 * 0.04).collect(),
            x: vec![[1.0, -2.0, 3.5]; 200],
        };
        let r = ado_fit(&data, &ValidityMask::all_valid(200), &DiscoveryConfig::default()).unwrap();
        assert!(r.coefficients.values.iter().all(|v| v.iter().all(|c| *c == 0.0)));
        let mean = eval_mean(&r);
        for d in 0..3 {
            assert!((mean[d] - data.x[0][d]).abs() < 1e-6, "{mean:?}");
        }
        assert!(r.is_degenerate());
    }

    fn eval_mean(r: &DiscoveryResult) -> [f64; 3] {
        let ts: Vec<f64> = (0..50).map(|i| r.diagnostics.domain[1] * i as f64 / 49.0).collect();
        let c = crate::spline::eval_curve(&r.model, &ts).unwrap();
        [0, 1, 2].map(|d| c.iter().map(|v| v[d]).sum::<f64>() / c.len() as f64)
    }

    #[test]
    fn sprott_f_support_and_coefficients() {
        let delta = [10.0, 10.0, 10.0];
        let (sys, data) = sample("SprottF", 0.04, 1000, delta);
        let mask = ValidityMask::all_valid(data.len());
        let r = ado_fit(&data, &mask, &DiscoveryConfig::default()).unwrap();
        let truth = shift_truth_coefficients(&sys, delta);
        assert_eq!(support_of(&r.coefficients), support_of(&truth), "{:?}", r.coefficients.render(&CandidateLibrary::cubic()));
        for (a, b) in r.coefficients.values.iter().zip(&truth.values) {
            for d in 0..3 {
                if b[d] != 0.0 {
                    assert!((a[d] - b[d]).abs() <= 0.05 * b[d].abs(), "{a:?} vs {b:?}");
                }
            }
        }
        // refit phases never increase the loss
        let starts = &r.diagnostics.phase_starts;
        for (k, &s) in starts.iter().enumerate() {
            let end = starts.get(k + 1).copied().unwrap_or(r.diagnostics.loss_trace.len());
            let phase = &r.diagnostics.loss_trace[s..end];
            assert!(phase.windows(2).all(|w| w[1].total <= w[0].total));
        }
    }

    #[test]
    fn lorenz_recall() {
        let (sys, data) = sample("Lorenz", 0.04, 1000, [0.0; 3]);
        let mask = ValidityMask::all_valid(data.len());
        let r = ado_fit(&data, &mask, &DiscoveryConfig::default()).unwrap();
        let got = support_of(&r.coefficients);
        let want = support_of(&sys.coeffs);
        let mut fp = 0;
        for (g, w) in got.iter().zip(&want) {
            for d in 0..3 {
                assert!(!w[d] || g[d], "{:?}", r.coefficients.render(&CandidateLibrary::cubic()));
                fp += usize::from(g[d] && !w[d]);
            }
        }
        assert!(fp <= 1, "{:?}", r.coefficients.render(&CandidateLibrary::cubic()));
    }

    #[test]
    fn remove_offset_examples() {
        let lib = CandidateLibrary::cubic();
        let x = lib.index_of_label("x").unwrap();
        let mut m = CoefficientMatrix::zeros(20);
        m.set(x, 0, 2.0);
        assert_eq!(remove_offset(&m, [0.0; 3]), m);
        let r = remove_offset(&m, [3.0, 0.0, 0.0]);
        assert_eq!(r.get(x, 0), 2.0);
        assert_eq!(r.get(0, 0), -6.0);
    }

    #[test]
    fn remove_offset_is_a_group_action() {
        let sys = SystemSpec::catalog("Lorenz").unwrap();
        let a = [1.5, -2.0, 0.25];
        let b = [-0.5, 3.0, 1.0];
        let two = remove_offset(&remove_offset(&sys.coeffs, a), b);
        let one = remove_offset(&sys.coeffs, [a[0] + b[0], a[1] + b[1], a[2] + b[2]]);
        assert!(two.max_abs_diff(&one) < 1e-12);
        let back = remove_offset(&shift_truth_coefficients(&sys, [-4.0, 2.0, 7.0]), [4.0, -2.0, -7.0]);
        assert!(back.max_abs_diff(&sys.coeffs) < 1e-12);
    }

    #[test]
    fn prune_small_examples() {
        let mut m = CoefficientMatrix::zeros(20);
        m.set(1, 0, 1.0);
        m.set(2, 0, 0.004);
        assert_eq!(prune_small(&m, 0.0), m);
        let p = prune_small(&m, 0.01);
        assert_eq!(p.get(1, 0), 1.0);
        assert_eq!(p.get(2, 0), 0.0);
        assert_eq!(prune_small(&m, 5.0).nnz(), 0);
    }

    #[test]
    fn too_few_collocation_points_rejected() {
        let (_, data) = sample("SprottF", 0.04, 100, [0.0; 3]);
        let cfg = DiscoveryConfig {
            n_collocation: Some(100),
            ..DiscoveryConfig::default()
        };
        assert!(matches!(
            ado_fit(&data, &ValidityMask::all_valid(data.len()), &cfg),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn covered_points() {
        let t = [0.0, 1.0, 2.0, 5.0];
        let idx = covered(&[0.0, 0.5, 1.5, 3.0, 4.5, 5.0], &t, 1.0);
        assert_eq!(idx, vec![0, 1, 2, 5]);
    }
}
