//! Clamped cubic B-splines: knots, Cox-de Boor basis rows, derivatives,
//! and curves `x(t) = G(t) P + offset`.
//!
//! Each basis row has at most four nonzero entries, so rows are kept in a
//! compact form ([`BasisRow`]); [`basis_matrix`] expands them to a dense
//! `N x r` matrix when that is more convenient.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::BandedSpd;

pub const DEGREE: usize = 3;

/// Non-decreasing knots with endpoint multiplicity `DEGREE + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    knots: Vec<f64>,
}

impl KnotVector {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of control points (`knots - 4`).
    pub fn n_ctrl(&self) -> usize {
        self.knots.len() - DEGREE - 1
    }

    pub fn start(&self) -> f64 {
        self.knots[DEGREE]
    }

    pub fn end(&self) -> f64 {
        self.knots[self.knots.len() - DEGREE - 1]
    }

    fn check(&self, t: f64) -> Result<f64> {
        let (a, b) = (self.start(), self.end());
        let slack = 1e-12 * (b - a).abs().max(1.0);
        if !(t >= a - slack && t <= b + slack) {
            return Err(Error::Domain { t, start: a, end: b });
        }
        Ok(t.clamp(a, b))
    }

    /// Knot span index `k` with `u_k <= t < u_{k+1}`; the right endpoint
    /// belongs to the last nonempty span.
    fn span(&self, t: f64) -> usize {
        let n = self.n_ctrl() - 1;
        if t >= self.knots[n + 1] {
            return n;
        }
        // first index with knot > t, minus one
        let k = self.knots.partition_point(|&u| u <= t) - 1;
        k.clamp(DEGREE, n)
    }
}

/// Clamped knots with uniform interior spacing.
pub fn clamped_knots(n_ctrl: usize, t_start: f64, t_end: f64) -> Result<KnotVector> {
    if n_ctrl < DEGREE + 1 {
        return Err(Error::Size(format!("need at least 4 control points, got {n_ctrl}")));
    }
    if !(t_end > t_start) {
        return Err(Error::Size(format!("empty spline domain [{t_start}, {t_end}]")));
    }
    let segments = n_ctrl - DEGREE;
    let mut knots = vec![t_start; DEGREE + 1];
    for i in 1..segments {
        knots.push(t_start + (t_end - t_start) * i as f64 / segments as f64);
    }
    knots.extend(std::iter::repeat_n(t_end, DEGREE + 1));
    Ok(KnotVector { knots })
}

/// The (at most) four nonzero basis values of one evaluation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisRow {
    /// Index of the first control point touched by this row.
    pub first: usize,
    pub values: [f64; 4],
}

impl BasisRow {
    pub fn dot(&self, control: &[[f64; 3]]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (k, &g) in self.values.iter().enumerate() {
            let p = control[self.first + k];
            for d in 0..3 {
                out[d] += g * p[d];
            }
        }
        out
    }
}

/// Values and first derivatives of the nonzero cubic basis functions on `span`.
fn basis_and_derivative(knots: &[f64], span: usize, t: f64) -> ([f64; 4], [f64; 4]) {
    let mut n = [0.0; 4];
    let mut left = [0.0; 4];
    let mut right = [0.0; 4];
    let mut deg2 = [0.0; 3];
    n[0] = 1.0;
    for j in 1..=DEGREE {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom != 0.0 { n[r] / denom } else { 0.0 };
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
        if j == DEGREE - 1 {
            deg2.copy_from_slice(&n[..3]);
        }
    }
    // dG_{i,3} = 3 G_{i,2} / (u_{i+3} - u_i) - 3 G_{i+1,2} / (u_{i+4} - u_{i+1})
    let mut dn = [0.0; 4];
    let first = span - DEGREE;
    let g2 = |q: isize| -> f64 {
        if (0..3).contains(&q) {
            deg2[q as usize]
        } else {
            0.0
        }
    };
    for (r, d) in dn.iter_mut().enumerate() {
        let i = first + r;
        let a = knots[i + 3] - knots[i];
        let b = knots[i + 4] - knots[i + 1];
        let lhs = if a > 0.0 { g2(r as isize - 1) / a } else { 0.0 };
        let rhs = if b > 0.0 { g2(r as isize) / b } else { 0.0 };
        *d = DEGREE as f64 * (lhs - rhs);
    }
    (n, dn)
}

/// Compact basis and derivative rows at `times`.
pub fn basis_rows(knots: &KnotVector, times: &[f64]) -> Result<(Vec<BasisRow>, Vec<BasisRow>)> {
    let mut g = Vec::with_capacity(times.len());
    let mut dg = Vec::with_capacity(times.len());
    for &t in times {
        let t = knots.check(t)?;
        let span = knots.span(t);
        let (v, d) = basis_and_derivative(&knots.knots, span, t);
        let first = span - DEGREE;
        g.push(BasisRow { first, values: v });
        dg.push(BasisRow { first, values: d });
    }
    Ok((g, dg))
}

fn dense(rows: &[BasisRow], n_ctrl: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), n_ctrl);
    for (i, row) in rows.iter().enumerate() {
        for (k, &v) in row.values.iter().enumerate() {
            m[(i, row.first + k)] = v;
        }
    }
    m
}

/// Dense `N x r` basis matrix `G(times)`.
pub fn basis_matrix(knots: &KnotVector, times: &[f64]) -> Result<DMatrix<f64>> {
    Ok(dense(&basis_rows(knots, times)?.0, knots.n_ctrl()))
}

/// Dense `N x r` derivative basis matrix `dG/dt(times)`.
pub fn basis_derivative_matrix(knots: &KnotVector, times: &[f64]) -> Result<DMatrix<f64>> {
    Ok(dense(&basis_rows(knots, times)?.1, knots.n_ctrl()))
}

/// Cubic B-spline curve in 3D with an additive offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineModel {
    pub knots: KnotVector,
    pub control: Vec<[f64; 3]>,
    pub offset: [f64; 3],
}

impl SplineModel {
    pub fn new(knots: KnotVector, control: Vec<[f64; 3]>, offset: [f64; 3]) -> Result<Self> {
        if control.len() != knots.n_ctrl() {
            return Err(Error::Size(format!(
                "{} control points for {} basis functions",
                control.len(),
                knots.n_ctrl()
            )));
        }
        Ok(Self { knots, control, offset })
    }

    /// Constant curve at `value` (control points zero, offset = value).
    pub fn constant(knots: KnotVector, value: [f64; 3]) -> Self {
        let r = knots.n_ctrl();
        Self {
            knots,
            control: vec![[0.0; 3]; r],
            offset: value,
        }
    }

    pub fn n_ctrl(&self) -> usize {
        self.control.len()
    }
}

/// `G(times) P + offset`.
pub fn eval_curve(model: &SplineModel, times: &[f64]) -> Result<Vec<[f64; 3]>> {
    let (g, _) = basis_rows(&model.knots, times)?;
    Ok(g.iter()
        .map(|row| {
            let v = row.dot(&model.control);
            [v[0] + model.offset[0], v[1] + model.offset[1], v[2] + model.offset[2]]
        })
        .collect())
}

/// `dG/dt(times) P`.
pub fn eval_derivative(model: &SplineModel, times: &[f64]) -> Result<Vec<[f64; 3]>> {
    let (_, dg) = basis_rows(&model.knots, times)?;
    Ok(dg.iter().map(|row| row.dot(&model.control)).collect())
}

/// Penalized least-squares control points:
/// `min sum_i w_i |G_i P - y_i|^2 + smoothing * sum_j |P_{j+1} - 2 P_j + P_{j-1}|^2`.
///
/// A positive `smoothing` keeps the system well posed across data gaps.
pub fn fit_control_points(
    knots: &KnotVector,
    rows: &[BasisRow],
    values: &[[f64; 3]],
    weights: &[f64],
    smoothing: f64,
) -> Result<Vec<[f64; 3]>> {
    let r = knots.n_ctrl();
    let mut a = BandedSpd::zeros(r, DEGREE);
    let mut rhs = vec![[0.0; 3]; r];
    for ((row, y), &w) in rows.iter().zip(values).zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (p, &gp) in row.values.iter().enumerate() {
            let i = row.first + p;
            for d in 0..3 {
                rhs[i][d] += w * gp * y[d];
            }
            for (q, &gq) in row.values.iter().enumerate().take(p + 1) {
                a.add(i, row.first + q, w * gp * gq);
            }
        }
    }
    if smoothing > 0.0 {
        for j in 1..r.saturating_sub(1) {
            let c = [(j - 1, 1.0), (j, -2.0), (j + 1, 1.0)];
            for &(i, ci) in &c {
                for &(k, ck) in &c {
                    if k <= i {
                        a.add(i, k, smoothing * ci * ck);
                    }
                }
            }
        }
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Size("spline fit is underdetermined; add smoothing or data".into()))?;
    let mut out = vec![[0.0; 3]; r];
    for d in 0..3 {
        let b: Vec<f64> = rhs.iter().map(|v| v[d]).collect();
        let x = chol.solve(&b);
        for (o, v) in out.iter_mut().zip(x) {
            o[d] = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct recursive Cox-de Boor, independent of the triangular scheme.
    fn cox_de_boor(knots: &[f64], i: usize, k: usize, u: f64, last_span: usize) -> f64 {
        if k == 0 {
            let inside = knots[i] <= u && u < knots[i + 1];
            // closed right end: the final nonempty span owns u_end
            let at_end = i == last_span && u == knots[i + 1];
            return if inside || at_end { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let a = knots[i + k] - knots[i];
        if a > 0.0 {
            v += (u - knots[i]) / a * cox_de_boor(knots, i, k - 1, u, last_span);
        }
        let b = knots[i + k + 1] - knots[i + 1];
        if b > 0.0 {
            v += (knots[i + k + 1] - u) / b * cox_de_boor(knots, i + 1, k - 1, u, last_span);
        }
        v
    }

    #[test]
    fn knot_examples() {
        let k = clamped_knots(4, 0.0, 1.0).unwrap();
        assert_eq!(k.knots(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        let k = clamped_knots(6, 0.0, 1.0).unwrap();
        assert_eq!(k.knots().len(), 10);
        assert!((k.knots()[4] - 1.0 / 3.0).abs() < 1e-15);
        assert!((k.knots()[5] - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(clamped_knots(3, 0.0, 1.0), Err(Error::Size(_))));
    }

    #[test]
    fn bezier_equivalence_and_endpoints() {
        let k = clamped_knots(4, 0.0, 1.0).unwrap();
        let g = basis_matrix(&k, &[0.0, 0.5, 1.0]).unwrap();
        let expect = [0.125, 0.375, 0.375, 0.125];
        for j in 0..4 {
            assert!((g[(1, j)] - expect[j]).abs() < 1e-15);
        }
        assert_eq!(g.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(g.row(2).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(basis_matrix(&k, &[1.5]), Err(Error::Domain { .. })));
    }

    #[test]
    fn matches_recursive_definition() {
        let k = clamped_knots(9, -1.0, 3.0).unwrap();
        let last_span = k.n_ctrl() - 1;
        let times: Vec<f64> = (0..=80).map(|i| -1.0 + 4.0 * i as f64 / 80.0).collect();
        let g = basis_matrix(&k, &times).unwrap();
        for (i, &t) in times.iter().enumerate() {
            for j in 0..k.n_ctrl() {
                let oracle = cox_de_boor(k.knots(), j, 3, t, last_span);
                assert!((g[(i, j)] - oracle).abs() < 1e-13, "t={t} j={j}");
            }
        }
    }

    #[test]
    fn partition_of_unity_and_derivative_sum() {
        let k = clamped_knots(37, 0.0, 40.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let times: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..=40.0)).collect();
        let (g, dg) = basis_rows(&k, &times).unwrap();
        for (a, b) in g.iter().zip(&dg) {
            assert!((a.values.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(b.values.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_matches_central_difference() {
        let k = clamped_knots(12, 0.0, 2.0).unwrap();
        let h = 1e-6;
        let times: Vec<f64> = (1..200).map(|i| 2.0 * i as f64 / 200.0).collect();
        let d = basis_derivative_matrix(&k, &times).unwrap();
        let plus: Vec<f64> = times.iter().map(|t| t + h).collect();
        let minus: Vec<f64> = times.iter().map(|t| t - h).collect();
        let gp = basis_matrix(&k, &plus).unwrap();
        let gm = basis_matrix(&k, &minus).unwrap();
        let fd = (gp - gm) / (2.0 * h);
        assert!((fd - d).abs().max() < 1e-5);
    }

    #[test]
    fn curve_contracts() {
        let k = clamped_knots(7, 0.0, 1.0).unwrap();
        let c = [1.5, -2.0, 0.25];
        let m = SplineModel::new(k.clone(), vec![c; 7], [0.0; 3]).unwrap();
        for v in eval_curve(&m, &[0.0, 0.33, 1.0]).unwrap() {
            for d in 0..3 {
                assert!((v[d] - c[d]).abs() < 1e-14);
            }
        }
        assert!(eval_derivative(&m, &[0.1, 0.7]).unwrap().iter().flatten().all(|v| v.abs() < 1e-12));
        let ctrl: Vec<[f64; 3]> = (0..7).map(|i| [i as f64, 0.0, -(i as f64)]).collect();
        let m0 = SplineModel::new(k.clone(), ctrl.clone(), [0.0; 3]).unwrap();
        let m1 = SplineModel::new(k, ctrl.clone(), [1.0, 2.0, 3.0]).unwrap();
        let (a, b) = (eval_curve(&m0, &[0.4]).unwrap()[0], eval_curve(&m1, &[0.4]).unwrap()[0]);
        assert_eq!([b[0] - a[0], b[1] - a[1], b[2] - a[2]], [1.0, 2.0, 3.0]);
        assert_eq!(eval_curve(&m1, &[0.0]).unwrap()[0], [ctrl[0][0] + 1.0, 2.0, ctrl[0][2] + 3.0]);
    }

    #[test]
    fn curve_stays_in_local_convex_hull() {
        let k = clamped_knots(15, 0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let ctrl: Vec<[f64; 3]> = (0..15)
            .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)])
            .collect();
        let m = SplineModel::new(k.clone(), ctrl.clone(), [0.5, 0.0, -1.0]).unwrap();
        let times: Vec<f64> = (0..500).map(|_| rng.random_range(0.0..=1.0)).collect();
        let (rows, _) = basis_rows(&k, &times).unwrap();
        let vals = eval_curve(&m, &times).unwrap();
        for (row, v) in rows.iter().zip(vals) {
            for d in 0..3 {
                let active = (row.first..row.first + 4).map(|j| ctrl[j][d] + m.offset[d]);
                let lo = active.clone().fold(f64::INFINITY, f64::min);
                let hi = active.fold(f64::NEG_INFINITY, f64::max);
                assert!(v[d] >= lo - 1e-12 && v[d] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn least_squares_reproduces_cubics() {
        let k = clamped_knots(10, 0.0, 3.0).unwrap();
        let times: Vec<f64> = (0..=300).map(|i| 3.0 * i as f64 / 300.0).collect();
        let f = |t: f64| [t * t * t - 2.0 * t + 1.0, 0.5 * t * t, -t + 4.0];
        let ys: Vec<[f64; 3]> = times.iter().map(|&t| f(t)).collect();
        let (rows, _) = basis_rows(&k, &times).unwrap();
        let ctrl = fit_control_points(&k, &rows, &ys, &vec![1.0; times.len()], 0.0).unwrap();
        let m = SplineModel::new(k, ctrl, [0.0; 3]).unwrap();
        let probe: Vec<f64> = (0..997).map(|i| 3.0 * i as f64 / 996.0).collect();
        let fit = eval_curve(&m, &probe).unwrap();
        let mse: f64 = probe
            .iter()
            .zip(&fit)
            .map(|(&t, v)| {
                let e = f(t);
                (0..3).map(|d| (v[d] - e[d]).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            / (3 * probe.len()) as f64;
        assert!(mse.sqrt() < 1e-8, "{}", mse.sqrt());
    }

    #[test]
    fn gap_is_bridged_with_smoothing() {
        let k = clamped_knots(40, 0.0, 10.0).unwrap();
        let times: Vec<f64> = (0..=200).map(|i| i as f64 * 0.05).collect();
        let ys: Vec<[f64; 3]> = times.iter().map(|t| [t.sin(), 0.0, 0.0]).collect();
        let w: Vec<f64> = times.iter().map(|&t| if (4.0..6.0).contains(&t) { 0.0 } else { 1.0 }).collect();
        let (rows, _) = basis_rows(&k, &times).unwrap();
        assert!(fit_control_points(&k, &rows, &ys, &w, 0.0).is_err());
        assert!(fit_control_points(&k, &rows, &ys, &w, 1e-6).is_ok());
    }
}
