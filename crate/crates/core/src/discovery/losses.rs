//! Candidate library and the data / physics losses.

use nalgebra::DMatrix;

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::poly::{CandidateLibrary, CoefficientMatrix};
use crate::spline::{basis_rows, BasisRow, SplineModel};
use crate::synth::ValidityMask;

/// Cubic monomials evaluated row-wise, `N x 20`.
pub fn build_library(states: &[[f64; 3]]) -> DMatrix<f64> {
    let lib = CandidateLibrary::cubic();
    let mut m = DMatrix::zeros(states.len(), lib.len());
    let mut row = vec![0.0; lib.len()];
    for (i, s) in states.iter().enumerate() {
        lib.eval_into(*s, &mut row);
        for (j, v) in row.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    m
}

/// Valid measurement times and values.
pub(crate) fn valid_samples(data: &Trajectory, mask: &ValidityMask) -> Result<(Vec<f64>, Vec<[f64; 3]>)> {
    if mask.len() != data.len() {
        return Err(Error::Size(format!("mask has {} frames, data {}", mask.len(), data.len())));
    }
    let mut t = Vec::new();
    let mut x = Vec::new();
    for i in 0..data.len() {
        if mask.is_valid(i) {
            if data.x[i].iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("non-finite measurement at frame {i}")));
            }
            t.push(data.t[i]);
            x.push(data.x[i]);
        }
    }
    Ok((t, x))
}

pub(crate) fn data_loss_rows(control: &[[f64; 3]], offset: [f64; 3], rows: &[BasisRow], values: &[[f64; 3]]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for (row, x) in rows.iter().zip(values) {
        let g = row.dot(control);
        for d in 0..3 {
            sum += (g[d] + offset[d] - x[d]).powi(2);
        }
    }
    sum / rows.len() as f64
}

/// `(1/N_m) sum |G P + offset - x|^2` over valid samples.
pub fn data_loss(model: &SplineModel, data: &Trajectory, mask: &ValidityMask) -> Result<f64> {
    let (t, x) = valid_samples(data, mask)?;
    let (rows, _) = basis_rows(&model.knots, &t)?;
    Ok(data_loss_rows(&model.control, model.offset, &rows, &x))
}

pub(crate) fn physics_loss_rows(
    control: &[[f64; 3]],
    lambda: &CoefficientMatrix,
    rows: &[BasisRow],
    drows: &[BasisRow],
) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let lib = CandidateLibrary::cubic();
    let mut phi = vec![0.0; lib.len()];
    let mut sum = 0.0;
    for (row, drow) in rows.iter().zip(drows) {
        lib.eval_into(row.dot(control), &mut phi);
        let rhs = lambda.contract(&phi);
        let dx = drow.dot(control);
        for d in 0..3 {
            sum += (rhs[d] - dx[d]).powi(2);
        }
    }
    sum / rows.len() as f64
}

/// `(1/N_c) sum |Phi(G P) Lambda - G' P|^2` at the collocation times. The
/// library sees the offset-free curve `G P`, so `Lambda` describes the
/// dynamics in coordinates centred on the offset.
pub fn physics_loss(model: &SplineModel, lambda: &CoefficientMatrix, collocation: &[f64]) -> Result<f64> {
    let (rows, drows) = basis_rows(&model.knots, collocation)?;
    Ok(physics_loss_rows(&model.control, lambda, &rows, &drows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate_rk4, SystemSpec};
    use crate::spline::{clamped_knots, fit_control_points};

    #[test]
    fn library_rows() {
        let m = build_library(&[[0.0; 3], [1.0; 3], [2.0, 0.0, 0.0]]);
        assert_eq!(m.ncols(), 20);
        assert_eq!(m[(0, 0)], 1.0);
        assert!((1..20).all(|j| m[(0, j)] == 0.0));
        assert!((0..20).all(|j| m[(1, j)] == 1.0));
        let lib = CandidateLibrary::cubic();
        for j in 0..20 {
            let want = match lib.label(j).as_str() {
                "1" => 1.0,
                "x" => 2.0,
                "x^2" => 4.0,
                "x^3" => 8.0,
                _ => 0.0,
            };
            assert_eq!(m[(2, j)], want, "{}", lib.label(j));
        }
    }

    fn line_model(value: [f64; 3], offset: [f64; 3]) -> SplineModel {
        let knots = clamped_knots(8, 0.0, 1.0).unwrap();
        SplineModel::new(knots, vec![value; 8], offset).unwrap()
    }

    fn constant_data(v: [f64; 3], n: usize) -> Trajectory {
        Trajectory {
            t: (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
            x: vec![v; n],
        }
    }

    #[test]
    fn data_loss_contracts() {
        let data = constant_data([1.0, 2.0, 3.0], 20);
        let mask = ValidityMask::all_valid(20);
        let exact = line_model([1.0, 2.0, 3.0], [0.0; 3]);
        assert!(data_loss(&exact, &data, &mask).unwrap() < 1e-24);
        let off = line_model([1.0, 2.0, 3.0], [0.5; 3]);
        assert!((data_loss(&off, &data, &mask).unwrap() - 0.75).abs() < 1e-12);
        // the same constant added to the offset and to the data cancels
        let shifted = Trajectory {
            t: data.t.clone(),
            x: data.x.iter().map(|v| [v[0] + 0.3, v[1] + 0.3, v[2] + 0.3]).collect(),
        };
        let off2 = line_model([1.0, 2.0, 3.0], [0.8; 3]);
        let a = data_loss(&off, &data, &mask).unwrap();
        let b = data_loss(&off2, &shifted, &mask).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn physics_loss_contracts() {
        let m = line_model([1.0, -1.0, 2.0], [0.0; 3]);
        let zero = CoefficientMatrix::zeros(20);
        let times: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        assert!(physics_loss(&m, &zero, &times).unwrap() < 1e-24);
        // constant lambda against constant velocity zero: doubling lambda quadruples the loss
        let mut lam = CoefficientMatrix::zeros(20);
        lam.set(0, 0, 1.5);
        let a = physics_loss(&m, &lam, &times).unwrap();
        let b = physics_loss(&m, &lam.scaled(2.0), &times).unwrap();
        assert!((b - 4.0 * a).abs() < 1e-12);
        assert!(physics_loss(&m, &zero, &[2.0]).is_err());
    }

    #[test]
    fn truth_has_small_physics_residual() {
        let sys = SystemSpec::catalog("SprottF").unwrap();
        let traj = integrate_rk4(&sys, sys.x0, 0.01, 1000).unwrap();
        let knots = clamped_knots(1003, 0.0, 10.0).unwrap();
        let (rows, _) = basis_rows(&knots, &traj.t).unwrap();
        let p = fit_control_points(&knots, &rows, &traj.x, &vec![1.0; traj.len()], 1e-10).unwrap();
        let model = SplineModel::new(knots, p, [0.0; 3]).unwrap();
        let colloc: Vec<f64> = (0..5000).map(|i| 0.2 + 9.6 * i as f64 / 4999.0).collect();
        let loss = physics_loss(&model, &sys.coeffs, &colloc).unwrap();
        assert!(loss <= 1e-4, "{loss}");
    }
}
