//! Generate a scene and knock out frames with random blocks and long
//! fiber-like gaps.

use videq::synth::{apply_block_missing, apply_fiber_missing, generate_scene, SceneConfig, ValidityMask};

fn main() -> videq::Result<()> {
    let scene = generate_scene(&SceneConfig::new("SprottF", [10.0, 10.0, 10.0], 7))?;
    let n = scene.truth.len();
    println!("{n} frames, cameras s = {:?}", scene.cameras.iter().map(|c| c.s).collect::<Vec<_>>());

    let full = ValidityMask::all_valid(n);
    let blocks = apply_block_missing(&full, 0.2, 1)?;
    let fiber = apply_fiber_missing(&full, 0.2, 2)?;
    println!("block 20%: {} invalid in {} gaps", blocks.count_invalid(), blocks.gaps().len());
    println!("fiber 20%: {} invalid in {} gaps", fiber.count_invalid(), fiber.gaps().len());
    for (start, len) in fiber.gaps() {
        println!("  gap at frame {start}, {len} frames");
    }
    let both = blocks.and(&fiber)?;
    println!("union: {} invalid", both.count_invalid());
    Ok(())
}
