//! Integrate a catalog system and print a few samples plus its bounding box.
//!
//! ```text
//! cargo run --example simulate_system -- Lorenz
//! ```

use videq::dynamics::{integrate_rk4, SystemSpec};

fn main() -> videq::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "Lorenz".into());
    let sys = SystemSpec::catalog(&name)?;
    let traj = integrate_rk4(&sys, sys.x0, 0.04, 1000)?;

    println!("{name}, {} samples at dt = 0.04", traj.len());
    for line in sys.coeffs.render(&videq::CandidateLibrary::cubic()) {
        println!("  {line}");
    }
    for i in (0..traj.len()).step_by(200) {
        let s = traj.x[i];
        println!("t = {:6.2}  ({:9.4}, {:9.4}, {:9.4})", traj.t[i], s[0], s[1], s[2]);
    }
    let (lo, hi) = traj.bounding_box();
    println!("box: {lo:.2?} .. {hi:.2?}");
    Ok(())
}
