//! Score a perturbed coefficient matrix and compare the attractors it
//! produces.

use videq::dynamics::{integrate_rk4, SystemSpec};
use videq::metrics::{bounding_box_overlap, score, simulate_discovered};

fn main() -> videq::Result<()> {
    let sys = SystemSpec::catalog("Lorenz")?;
    let mut id = sys.coeffs.scaled(1.02);
    // a spurious constant in dz/dt
    id.set(0, 2, -0.94);

    let s = score(&id, &sys.coeffs)?;
    println!("{}", serde_json::to_string_pretty(&s)?);

    let truth = integrate_rk4(&sys, sys.x0, 0.04, 1000)?;
    let sim = simulate_discovered(&id, sys.x0, 0.04, 1000)?;
    println!("bounding-box overlap {:.3}", bounding_box_overlap(&truth, &sim));
    Ok(())
}
