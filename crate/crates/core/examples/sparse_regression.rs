//! Sequential thresholded ridge regression on a planted sparse problem.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use videq::discovery::{stridge, stridge_adaptive, ThresholdSchedule};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let phi = DMatrix::from_fn(300, 10, |_, _| rng.random_range(-1.0..1.0));
    let truth = [0.0, 2.5, 0.0, 0.0, -1.2, 0.0, 0.0, 0.7, 0.0, 0.0];
    let mut y = &phi * DVector::from_row_slice(&truth);
    for v in y.iter_mut() {
        *v += rng.random_range(-0.02..0.02);
    }

    let fixed = stridge(&phi, &y, 1e-5, 0.1);
    println!("threshold 0.1: {:.3?}", fixed.coef);
    let sched = ThresholdSchedule {
        initial: 1e-3,
        factor: 2.0,
        levels: 12,
        tolerance: 0.5,
    };
    let adaptive = stridge_adaptive(&phi, &y, 1e-5, &sched);
    println!(
        "adaptive (threshold {:.3}): {:.3?}, residual {:.2e}",
        adaptive.threshold, adaptive.coef, adaptive.residual
    );
}
