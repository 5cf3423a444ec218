//! Discover the equations of a shifted SprottF trajectory with 20% of the
//! samples missing in long gaps.

use videq::discovery::{ado_fit, DiscoveryConfig};
use videq::dynamics::{integrate_rk4, shift_truth_coefficients, SystemSpec};
use videq::synth::{apply_fiber_missing, ValidityMask};
use videq::CandidateLibrary;

fn main() -> videq::Result<()> {
    let sys = SystemSpec::catalog("SprottF")?;
    let delta = [10.0, 10.0, 10.0];
    let data = integrate_rk4(&sys, sys.x0, 0.04, 1000)?.shifted(delta);
    let mask = apply_fiber_missing(&ValidityMask::all_valid(data.len()), 0.2, 4)?;

    let result = ado_fit(&data, &mask, &DiscoveryConfig::default())?;
    let lib = CandidateLibrary::cubic();
    println!("fitted offset {:.3?}", result.model.offset);
    println!("centred frame:");
    for line in result.lambda_centered.render(&lib) {
        println!("  {line}");
    }
    println!("measurement frame:");
    for line in result.coefficients.render(&lib) {
        println!("  {line}");
    }
    println!("truth:");
    for line in shift_truth_coefficients(&sys, delta).render(&lib) {
        println!("  {line}");
    }
    Ok(())
}
