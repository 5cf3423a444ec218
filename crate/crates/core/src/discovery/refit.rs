//! Joint refit of control points, offset and surviving coefficients on
//! `L_d + alpha L_p`.
//!
//! Unknowns are ordered as control points interleaved by dimension
//! (`3 k + e`), which keeps their normal matrix banded, followed by a small
//! dense border: the three offsets and the active coefficients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::losses::{data_loss_rows, physics_loss_rows};
use crate::linalg::BandedSpd;
use crate::poly::{CandidateLibrary, CoefficientMatrix};
use crate::spline::BasisRow;

/// Half bandwidth of the control-point block: four basis functions times
/// three interleaved dimensions.
const BAND: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefitMethod {
    /// Damped Gauss-Newton steps, accepted only when the loss drops.
    LevenbergMarquardt,
    /// Diagonally preconditioned gradient descent with adaptive step.
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefitConfig {
    pub method: RefitMethod,
    pub max_iters: usize,
    /// Stop once an accepted step improves the loss by less than this
    /// relative amount.
    pub rel_tol: f64,
}

impl Default for RefitConfig {
    fn default() -> Self {
        Self {
            method: RefitMethod::LevenbergMarquardt,
            max_iters: 100,
            rel_tol: 1e-10,
        }
    }
}

/// Fixed data of one refit problem.
pub(crate) struct Problem<'a> {
    pub data_rows: &'a [BasisRow],
    pub data_values: &'a [[f64; 3]],
    pub col_rows: &'a [BasisRow],
    pub col_drows: &'a [BasisRow],
    pub alpha: f64,
}

/// Optimization variables.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Params {
    pub control: Vec<[f64; 3]>,
    pub offset: [f64; 3],
    pub lambda: CoefficientMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub data: f64,
    pub physics: f64,
    pub total: f64,
}

impl Problem<'_> {
    pub fn loss(&self, p: &Params) -> LossParts {
        let data = data_loss_rows(&p.control, p.offset, self.data_rows, self.data_values);
        let physics = physics_loss_rows(&p.control, &p.lambda, self.col_rows, self.col_drows);
        LossParts {
            data,
            physics,
            total: data + self.alpha * physics,
        }
    }
}

/// Active `(term, dim)` entries of `lambda`, in column-major order.
pub(crate) fn active_entries(lambda: &CoefficientMatrix) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for d in 0..3 {
        for j in 0..lambda.n_terms() {
            if lambda.get(j, d) != 0.0 {
                out.push((j, d));
            }
        }
    }
    out
}

/// Gauss-Newton normal equations `H = J^T W J`, `g = J^T W r`.
struct Normal {
    a: BandedSpd,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    gp: Vec<f64>,
    gb: Vec<f64>,
}

impl Normal {
    fn new(n_p: usize, m: usize) -> Self {
        Self {
            a: BandedSpd::zeros(n_p, BAND),
            b: DMatrix::zeros(n_p, m),
            c: DMatrix::zeros(m, m),
            gp: vec![0.0; n_p],
            gb: vec![0.0; m],
        }
    }

    /// One residual `r` with weight `w`, sparse Jacobian entries in the band
    /// block (`base + offset`, value) and the border block.
    fn add_row(&mut self, base: usize, p_vals: &[f64], border: &[(usize, f64)], r: f64, w: f64) {
        for (i, &vi) in p_vals.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            self.gp[base + i] += w * vi * r;
            for (k, &vk) in p_vals.iter().enumerate().take(i + 1) {
                if vk != 0.0 {
                    self.a.add(base + i, base + k, w * vi * vk);
                }
            }
            for &(q, vq) in border {
                self.b[(base + i, q)] += w * vi * vq;
            }
        }
        for &(q, vq) in border {
            self.gb[q] += w * vq * r;
            for &(s, vs) in border {
                self.c[(q, s)] += w * vq * vs;
            }
        }
    }
}

fn assemble(problem: &Problem, p: &Params, entries: &[(usize, usize)]) -> Normal {
    let r_ctrl = p.control.len();
    let m = 3 + entries.len();
    let mut normal = Normal::new(3 * r_ctrl, m);
    let wd = if problem.data_rows.is_empty() { 0.0 } else { 1.0 / problem.data_rows.len() as f64 };
    let wp = if problem.col_rows.is_empty() {
        0.0
    } else {
        problem.alpha / problem.col_rows.len() as f64
    };

    let mut p_vals = [0.0; 12];
    for (row, x) in problem.data_rows.iter().zip(problem.data_values) {
        let g = row.dot(&p.control);
        for e in 0..3 {
            p_vals.fill(0.0);
            for k in 0..4 {
                p_vals[3 * k + e] = row.values[k];
            }
            let r = g[e] + p.offset[e] - x[e];
            normal.add_row(3 * row.first, &p_vals, &[(e, 1.0)], r, wd);
        }
    }

    let lib = CandidateLibrary::cubic();
    let l = lib.len();
    let mut phi = vec![0.0; l];
    let mut grads = vec![[0.0; 3]; l];
    let by_dim: Vec<Vec<(usize, usize)>> = (0..3)
        .map(|d| {
            entries
                .iter()
                .enumerate()
                .filter(|(_, (_, e))| *e == d)
                .map(|(q, (j, _))| (*j, 3 + q))
                .collect()
        })
        .collect();
    let mut border = Vec::with_capacity(l);
    for (row, drow) in problem.col_rows.iter().zip(problem.col_drows) {
        let y = row.dot(&p.control);
        let dx = drow.dot(&p.control);
        lib.eval_with_grad(y, &mut phi, &mut grads);
        for e in 0..3 {
            let mut rhs = 0.0;
            let mut v = [0.0; 3];
            border.clear();
            for &(j, q) in &by_dim[e] {
                let lam = p.lambda.get(j, e);
                rhs += lam * phi[j];
                for d in 0..3 {
                    v[d] += lam * grads[j][d];
                }
                border.push((q, phi[j]));
            }
            let r = rhs - dx[e];
            for k in 0..4 {
                for d in 0..3 {
                    let mut val = v[d] * row.values[k];
                    if d == e {
                        val -= drow.values[k];
                    }
                    p_vals[3 * k + d] = val;
                }
            }
            // rows share the same first index for value and derivative bases
            debug_assert_eq!(row.first, drow.first);
            normal.add_row(3 * row.first, &p_vals, &border, r, wp);
        }
    }
    normal
}

fn apply_step(p: &Params, entries: &[(usize, usize)], dp: &[f64], db: &[f64]) -> Params {
    let mut out = p.clone();
    for (k, c) in out.control.iter_mut().enumerate() {
        for e in 0..3 {
            c[e] += dp[3 * k + e];
        }
    }
    for e in 0..3 {
        out.offset[e] += db[e];
    }
    for (q, &(j, e)) in entries.iter().enumerate() {
        let v = out.lambda.get(j, e) + db[3 + q];
        // keep the support fixed even if a value crosses zero exactly
        out.lambda.set(j, e, if v == 0.0 { f64::MIN_POSITIVE } else { v });
    }
    out
}

/// Solve `(H + mu diag(H)) delta = -g` by banded Cholesky plus Schur
/// complement on the border.
fn damped_step(n: &Normal, mu: f64) -> Option<(Vec<f64>, Vec<f64>)> {
    let n_p = n.gp.len();
    let m = n.gb.len();
    let mut a = n.a.clone();
    let diag = a.diagonal();
    let dmax = diag.iter().cloned().fold(0.0, f64::max).max(1e-300);
    for (i, d) in diag.iter().enumerate() {
        a.add(i, i, mu * d + 1e-14 * dmax);
    }
    let chol = a.cholesky()?;
    let mut z = DMatrix::zeros(n_p, m);
    for q in 0..m {
        let col: Vec<f64> = n.b.column(q).iter().copied().collect();
        let sol = chol.solve(&col);
        z.set_column(q, &DVector::from_vec(sol));
    }
    let f: Vec<f64> = n.gp.iter().map(|g| -g).collect();
    let u = chol.solve(&f);
    let mut s = &n.c - n.b.transpose() * &z;
    let cmax = (0..m).map(|i| n.c[(i, i)]).fold(0.0, f64::max).max(1e-300);
    for i in 0..m {
        s[(i, i)] += mu * n.c[(i, i)] + 1e-14 * cmax;
    }
    let h = DVector::from_iterator(m, n.gb.iter().map(|g| -g)) - n.b.transpose() * DVector::from_column_slice(&u);
    let db = match s.clone().cholesky() {
        Some(ch) => ch.solve(&h),
        None => s.lu().solve(&h)?,
    };
    let zdb = &z * &db;
    let dp: Vec<f64> = u.iter().zip(zdb.iter()).map(|(a, b)| a - b).collect();
    Some((dp, db.iter().copied().collect()))
}

/// Outcome of one refit phase.
pub(crate) struct RefitOutcome {
    pub params: Params,
    pub trace: Vec<LossParts>,
    pub converged: bool,
}

pub(crate) fn refit(problem: &Problem, start: Params, config: &RefitConfig) -> RefitOutcome {
    match config.method {
        RefitMethod::LevenbergMarquardt => levenberg_marquardt(problem, start, config),
        RefitMethod::Gradient => gradient_descent(problem, start, config),
    }
}

fn levenberg_marquardt(problem: &Problem, start: Params, config: &RefitConfig) -> RefitOutcome {
    let entries = active_entries(&start.lambda);
    let mut p = start;
    let mut loss = problem.loss(&p);
    let mut trace = vec![loss];
    let mut mu = 1e-3;
    let mut converged = false;
    for _ in 0..config.max_iters {
        let normal = assemble(problem, &p, &entries);
        let mut accepted = false;
        while mu < 1e12 {
            if let Some((dp, db)) = damped_step(&normal, mu) {
                let cand = apply_step(&p, &entries, &dp, &db);
                let cand_loss = problem.loss(&cand);
                if cand_loss.total.is_finite() && cand_loss.total < loss.total {
                    let rel = (loss.total - cand_loss.total) / loss.total.max(1e-300);
                    p = cand;
                    loss = cand_loss;
                    trace.push(loss);
                    mu = (mu * 0.3).max(1e-12);
                    accepted = true;
                    if rel < config.rel_tol {
                        converged = true;
                    }
                    break;
                }
            }
            mu *= 4.0;
        }
        if !accepted {
            // no descent direction left at any damping: a stationary point
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    RefitOutcome {
        params: p,
        trace,
        converged,
    }
}

fn gradient_descent(problem: &Problem, start: Params, config: &RefitConfig) -> RefitOutcome {
    let entries = active_entries(&start.lambda);
    let mut p = start;
    let mut loss = problem.loss(&p);
    let mut trace = vec![loss];
    let mut step = 1e-2;
    let mut converged = false;
    for _ in 0..config.max_iters {
        let n = assemble(problem, &p, &entries);
        let dpre: Vec<f64> = n.a.diagonal().iter().map(|d| if *d > 0.0 { 1.0 / d } else { 0.0 }).collect();
        let cpre: Vec<f64> = (0..n.gb.len()).map(|i| if n.c[(i, i)] > 0.0 { 1.0 / n.c[(i, i)] } else { 0.0 }).collect();
        let dp: Vec<f64> = n.gp.iter().zip(&dpre).map(|(g, d)| -step * g * d).collect();
        let db: Vec<f64> = n.gb.iter().zip(&cpre).map(|(g, d)| -step * g * d).collect();
        let cand = apply_step(&p, &entries, &dp, &db);
        let cand_loss = problem.loss(&cand);
        if cand_loss.total < loss.total {
            let rel = (loss.total - cand_loss.total) / loss.total.max(1e-300);
            p = cand;
            loss = cand_loss;
            trace.push(loss);
            step *= 1.2;
            if rel < config.rel_tol {
                converged = true;
                break;
            }
        } else {
            step *= 0.5;
            if step < 1e-12 {
                converged = true;
                break;
            }
        }
    }
    RefitOutcome {
        params: p,
        trace,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spline::{basis_rows, clamped_knots};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type Fixture = (Vec<BasisRow>, Vec<[f64; 3]>, Vec<BasisRow>, Vec<BasisRow>, Params);

    fn setup() -> Fixture {
        let knots = clamped_knots(30, 0.0, 3.0).unwrap();
        let t: Vec<f64> = (0..60).map(|i| 3.0 * i as f64 / 59.0).collect();
        let x: Vec<[f64; 3]> = t.iter().map(|t| [t.sin(), t.cos(), 0.5 * t]).collect();
        let (rows, _) = basis_rows(&knots, &t).unwrap();
        let tc: Vec<f64> = (0..200).map(|i| 3.0 * i as f64 / 199.0).collect();
        let (cr, cd) = basis_rows(&knots, &tc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut lambda = CoefficientMatrix::zeros(20);
        lambda.set(2, 0, 0.8);
        lambda.set(1, 1, -0.9);
        lambda.set(0, 2, 0.4);
        lambda.set(4, 2, 0.1);
        let params = Params {
            control: (0..30).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect(),
            offset: [0.1, -0.1, 0.2],
            lambda,
        };
        (rows, x, cr, cd, params)
    }

    /// Numerical gradient of the total loss against the assembled one.
    #[test]
    fn gradient_matches_finite_differences() {
        let (rows, x, cr, cd, p) = setup();
        let prob = Problem {
            data_rows: &rows,
            data_values: &x,
            col_rows: &cr,
            col_drows: &cd,
            alpha: 0.7,
        };
        let entries = active_entries(&p.lambda);
        let n = assemble(&prob, &p, &entries);
        let h = 1e-6;
        let n_p = 3 * p.control.len();
        let probe = |dp: &[f64], db: &[f64]| {
            let plus = prob.loss(&apply_step(&p, &entries, dp, db)).total;
            let neg_p: Vec<f64> = dp.iter().map(|v| -v).collect();
            let neg_b: Vec<f64> = db.iter().map(|v| -v).collect();
            let minus = prob.loss(&apply_step(&p, &entries, &neg_p, &neg_b)).total;
            (plus - minus) / (2.0 * h)
        };
        for i in [0, 5, 17, 44, n_p - 1] {
            let mut dp = vec![0.0; n_p];
            dp[i] = h;
            let fd = probe(&dp, &vec![0.0; 3 + entries.len()]);
            assert!((fd - 2.0 * n.gp[i]).abs() < 1e-5 * (1.0 + fd.abs()), "{i}: {fd} vs {}", 2.0 * n.gp[i]);
        }
        for q in 0..3 + entries.len() {
            let mut db = vec![0.0; 3 + entries.len()];
            db[q] = h;
            let fd = probe(&vec![0.0; n_p], &db);
            assert!((fd - 2.0 * n.gb[q]).abs() < 1e-5 * (1.0 + fd.abs()), "{q}: {fd} vs {}", 2.0 * n.gb[q]);
        }
    }

    #[test]
    fn refit_descends_monotonically() {
        let (rows, x, cr, cd, p) = setup();
        let prob = Problem {
            data_rows: &rows,
            data_values: &x,
            col_rows: &cr,
            col_drows: &cd,
            alpha: 1.0,
        };
        for method in [RefitMethod::LevenbergMarquardt, RefitMethod::Gradient] {
            let cfg = RefitConfig {
                method,
                max_iters: if method == RefitMethod::Gradient { 500 } else { 40 },
                rel_tol: 1e-12,
            };
            let out = refit(&prob, p.clone(), &cfg);
            assert!(out.trace.windows(2).all(|w| w[1].total <= w[0].total));
            assert!(out.trace.last().unwrap().total < 0.2 * out.trace[0].total);
        }
    }
}
