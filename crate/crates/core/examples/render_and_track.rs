//! Render noisy frames of a moving marker and track it back.

use videq::synth::{generate_scene, Background, RenderConfig, SceneConfig};
use videq::tracking::{render_and_track, DEFAULT_TOL};

fn main() -> videq::Result<()> {
    let mut cfg = SceneConfig::new("Lorenz", [0.0; 3], 3);
    cfg.duration = 8.0;
    let scene = generate_scene(&cfg)?;
    let truth = &scene.tracks[0];
    let render = RenderConfig {
        image_size: scene.cameras[0].image_size,
        background: Background::Blobs,
        seed: 3,
    };

    for level in [0.0, 0.1, 0.2] {
        let tracked = render_and_track(truth, &cfg.marker, &render, level, DEFAULT_TOL)?;
        let mut se = 0.0;
        let mut n = 0;
        for i in 0..truth.len() {
            if tracked.mask.is_valid(i) {
                let (a, b) = (tracked.coords[i], truth.coords[i]);
                se += (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
                n += 1;
            }
        }
        println!(
            "noise {level:.1}: detected {n}/{} frames, centroid RMSE {:.3} px",
            truth.len(),
            (se / n.max(1) as f64).sqrt()
        );
    }
    Ok(())
}
