//! Sequential thresholded ridge regression.

use nalgebra::{DMatrix, DVector};

/// Sparse coefficients for one output dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct StridgeResult {
    pub coef: Vec<f64>,
    pub support: Vec<bool>,
    /// Every coefficient was thresholded away.
    pub empty: bool,
    /// Mean squared residual `|Phi coef - y|^2 / N`.
    pub residual: f64,
    pub threshold: f64,
}

fn mse(phi: &DMatrix<f64>, coef: &[f64], y: &DVector<f64>) -> f64 {
    let c = DVector::from_column_slice(coef);
    (phi * c - y).norm_squared() / y.len().max(1) as f64
}

/// Least squares on the columns in `support` (columns pre-scaled by `scale`),
/// with `ridge` added on the normalized scale. Returns unscaled coefficients.
fn solve_on(
    phi: &DMatrix<f64>,
    scale: &[f64],
    y: &DVector<f64>,
    support: &[bool],
    ridge: f64,
) -> Vec<f64> {
    let cols: Vec<usize> = (0..support.len()).filter(|j| support[*j]).collect();
    let n = phi.nrows() as f64;
    let mut out = vec![0.0; support.len()];
    if cols.is_empty() {
        return out;
    }
    let mut a = DMatrix::zeros(phi.nrows(), cols.len());
    for (k, &j) in cols.iter().enumerate() {
        a.set_column(k, &(phi.column(j) / scale[j]));
    }
    let w = if ridge > 0.0 {
        let mut g = a.transpose() * &a / n;
        for k in 0..cols.len() {
            g[(k, k)] += ridge;
        }
        let b = a.transpose() * y / n;
        match g.clone().cholesky() {
            Some(ch) => ch.solve(&b),
            None => g.svd(true, true).solve(&b, 1e-14).unwrap_or_else(|_| DVector::zeros(cols.len())),
        }
    } else {
        let svd = a.svd(true, true);
        let tol = 1e-13 * svd.singular_values.max();
        svd.solve(y, tol).unwrap_or_else(|_| DVector::zeros(cols.len()))
    };
    for (k, &j) in cols.iter().enumerate() {
        out[j] = w[k] / scale[j];
    }
    out
}

/// Alternate ridge fits and hard thresholding (`|coef| < threshold` is
/// dropped) until the support stops changing, then refit the surviving
/// columns by ordinary least squares.
pub fn stridge(phi: &DMatrix<f64>, y: &DVector<f64>, ridge: f64, threshold: f64) -> StridgeResult {
    let l = phi.ncols();
    let n = phi.nrows().max(1) as f64;
    let scale: Vec<f64> = (0..l).map(|j| phi.column(j).norm() / n.sqrt()).collect();
    // columns that are numerically zero relative to the largest carry no signal
    let cutoff = 1e-10 * scale.iter().cloned().fold(0.0, f64::max);
    let mut support: Vec<bool> = scale.iter().map(|s| *s > cutoff).collect();
    let mut coef = vec![0.0; l];
    for _ in 0..=4 * l {
        coef = solve_on(phi, &scale, y, &support, ridge);
        let mut next: Vec<bool> = coef.iter().map(|c| c.abs() >= threshold && *c != 0.0).collect();
        if next == support {
            // debias, then make sure the unregularized values still pass
            let ols = solve_on(phi, &scale, y, &support, 0.0);
            next = ols.iter().map(|c| c.abs() >= threshold && *c != 0.0).collect();
            if next == support {
                coef = ols;
                break;
            }
        }
        support = next;
        if !support.iter().any(|s| *s) {
            break;
        }
    }
    let empty = !support.iter().any(|s| *s);
    if empty {
        coef = vec![0.0; l];
    }
    for (c, s) in coef.iter_mut().zip(&support) {
        if !s {
            *c = 0.0;
        }
    }
    StridgeResult {
        residual: mse(phi, &coef, y),
        coef,
        support,
        empty,
        threshold,
    }
}

/// Threshold selection for [`stridge`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSchedule {
    pub initial: f64,
    pub factor: f64,
    pub levels: usize,
    /// A larger threshold is accepted while its residual stays within
    /// `(1 + tolerance)` of the residual at the initial threshold.
    pub tolerance: f64,
}

/// Run [`stridge`] at `initial * factor^k` for `k < levels` and keep the
/// sparsest model whose residual has not grown beyond the tolerance.
pub fn stridge_adaptive(phi: &DMatrix<f64>, y: &DVector<f64>, ridge: f64, schedule: &ThresholdSchedule) -> StridgeResult {
    let base = stridge(phi, y, ridge, schedule.initial);
    let floor = y.norm_squared() / y.len().max(1) as f64 * 1e-14;
    let limit = base.residual * (1.0 + schedule.tolerance) + floor;
    let mut best = base;
    let mut tau = schedule.initial;
    for _ in 1..schedule.levels {
        tau *= schedule.factor;
        let cand = stridge(phi, y, ridge, tau);
        if cand.empty || cand.residual > limit {
            break;
        }
        best = cand;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(rng: &mut ChaCha8Rng, n: usize, l: usize, k: usize) -> (DMatrix<f64>, Vec<f64>) {
        let phi = DMatrix::from_fn(n, l, |_, _| rng.random_range(-1.0..1.0));
        let mut truth = vec![0.0; l];
        let mut placed = 0;
        while placed < k {
            let j = rng.random_range(0..l);
            if truth[j] == 0.0 {
                let mag: f64 = rng.random_range(1.0..3.0);
                truth[j] = if rng.random_bool(0.5) { mag } else { -mag };
                placed += 1;
            }
        }
        (phi, truth)
    }

    /// Smallest support whose least-squares residual vanishes.
    fn best_subset(phi: &DMatrix<f64>, y: &DVector<f64>) -> Vec<bool> {
        let l = phi.ncols();
        let mut best: Option<(usize, Vec<bool>)> = None;
        for mask in 0u32..(1 << l) {
            let support: Vec<bool> = (0..l).map(|j| mask & (1 << j) != 0).collect();
            let size = mask.count_ones() as usize;
            if best.as_ref().is_some_and(|b| b.0 <= size) {
                continue;
            }
            let scale = vec![1.0; l];
            let coef = solve_on(phi, &scale, y, &support, 0.0);
            if mse(phi, &coef, y) <= 1e-20 * y.norm_squared() {
                best = Some((size, support));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn large_threshold_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (phi, truth) = random_problem(&mut rng, 100, 6, 2);
        let y = &phi * DVector::from_vec(truth);
        let r = stridge(&phi, &y, 1e-5, 10.0);
        assert!(r.empty);
        assert!(r.coef.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn orthonormal_columns() {
        let phi = DMatrix::<f64>::identity(8, 5);
        let y = phi.column(2) * 3.0;
        let r = stridge(&phi, &y, 1e-5, 1.0);
        assert!((r.coef[2] - 3.0).abs() < 1e-12);
        assert!(r.coef.iter().enumerate().all(|(j, c)| j == 2 || *c == 0.0));
    }

    #[test]
    fn zero_threshold_zero_ridge_is_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = DMatrix::from_fn(60, 7, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(60, |_, _| rng.random_range(-1.0..1.0));
        let r = stridge(&phi, &y, 0.0, 0.0);
        let ols = phi.clone().svd(true, true).solve(&y, 1e-14).unwrap();
        for j in 0..7 {
            assert!((r.coef[j] - ols[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn matches_best_subset_on_planted_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (phi, truth) = random_problem(&mut rng, 200, 8, 3);
            let y = &phi * DVector::from_vec(truth.clone());
            let r = stridge(&phi, &y, 1e-5, 0.5);
            assert_eq!(r.support, best_subset(&phi, &y));
            for j in 0..8 {
                assert!((r.coef[j] - truth[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn adaptive_schedule_drops_small_noise_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (phi, truth) = random_problem(&mut rng, 400, 8, 3);
        let mut y = &phi * DVector::from_vec(truth.clone());
        for v in y.iter_mut() {
            *v += rng.random_range(-0.01..0.01);
        }
        let sched = ThresholdSchedule {
            initial: 1e-4,
            factor: 2.0,
            levels: 14,
            tolerance: 0.5,
        };
        let r = stridge_adaptive(&phi, &y, 1e-5, &sched);
        let want: Vec<bool> = truth.iter().map(|c| *c != 0.0).collect();
        assert_eq!(r.support, want);
    }
}
