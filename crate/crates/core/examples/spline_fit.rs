//! Fit a clamped cubic B-spline to noisy samples of a sine and compare the
//! spline derivative with the exact one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use videq::spline::{basis_rows, clamped_knots, eval_derivative, fit_control_points, SplineModel};

fn main() -> videq::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t: Vec<f64> = (0..400).map(|i| i as f64 * 0.025).collect();
    let y: Vec<[f64; 3]> = t
        .iter()
        .map(|t| [t.sin() + rng.random_range(-0.01..0.01), (2.0 * t).cos(), 0.1 * t])
        .collect();

    for n_ctrl in [20, 60, 200] {
        let knots = clamped_knots(n_ctrl, t[0], t[t.len() - 1])?;
        let (rows, _) = basis_rows(&knots, &t)?;
        let control = fit_control_points(&knots, &rows, &y, &vec![1.0; t.len()], 1e-6)?;
        let model = SplineModel::new(knots, control, [0.0; 3])?;
        let probe: Vec<f64> = (1..99).map(|i| i as f64 * 0.1).collect();
        let dx = eval_derivative(&model, &probe)?;
        let err = probe
            .iter()
            .zip(&dx)
            .map(|(t, d)| (d[0] - t.cos()).abs())
            .fold(0.0, f64::max);
        println!("{n_ctrl:4} control points: max |dx/dt error| = {err:.4}");
    }
    Ok(())
}
