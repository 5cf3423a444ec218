//! Learn the scale and in-plane rotation of the two uncalibrated cameras,
//! then triangulate the trajectory.

use videq::reconstruction::{fit_camera_params, reconstruct_3d, OptimizerConfig};
use videq::synth::{generate_scene, SceneConfig};

fn main() -> videq::Result<()> {
    let mut cfg = SceneConfig::new("NoseHoover", [5.0, -3.0, 2.0], 11);
    cfg.quantize = false;
    let scene = generate_scene(&cfg)?;

    let rig = fit_camera_params(&scene.tracks, &scene.cameras, &OptimizerConfig::default())?;
    for (k, cam) in scene.cameras.iter().enumerate() {
        println!(
            "camera {k}: s {:.6} (true {:.6}), theta {:+.6} (true {:+.6})",
            rig.s[k], cam.s, rig.theta[k], cam.theta
        );
    }
    println!("loss {:.3e} after {} iterations", rig.final_loss, rig.iterations);

    let rec = reconstruct_3d(&scene.tracks, &rig, &scene.cameras, cfg.fps)?;
    let worst = rec
        .trajectory
        .x
        .iter()
        .zip(&scene.truth.x)
        .map(|(a, b)| (0..3).map(|d| (a[d] - b[d]).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    println!("max reconstruction error {worst:.2e}");
    Ok(())
}
