//! Color-threshold blob tracking of a single marker.

use std::io::{BufRead, BufReader, Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{fmt17, parse_row};
use crate::error::{Error, Result};
use crate::synth::{apply_noise_frame, derive_seed, render_frame, MarkerSpec, RenderConfig, RgbFrame, ValidityMask};

/// Smallest connected component accepted as a detection.
pub const MIN_AREA: usize = 4;
/// Default RGB distance threshold.
pub const DEFAULT_TOL: f64 = 100.0;

/// Raster pixel coordinates `(u, v)` per frame with validity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelTrack {
    pub frames: Vec<usize>,
    pub coords: Vec<[f64; 2]>,
    pub mask: ValidityMask,
}

impl PixelTrack {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Same track with `mask` ANDed in.
    pub fn with_mask(&self, mask: &ValidityMask) -> Result<Self> {
        Ok(Self {
            mask: self.mask.and(mask)?,
            ..self.clone()
        })
    }

    /// `frame,u,v,valid`; invalid rows keep whatever coordinates are stored.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "frame,u,v,valid")?;
        for ((f, c), ok) in self.frames.iter().zip(&self.coords).zip(&self.mask.0) {
            writeln!(w, "{f},{},{},{}", fmt17(c[0]), fmt17(c[1]), u8::from(*ok))?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut out = Self {
            frames: Vec::new(),
            coords: Vec::new(),
            mask: ValidityMask(Vec::new()),
        };
        for (i, line) in BufReader::new(r).lines().enumerate() {
            let line = line?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let row = parse_row(&line, 4)?;
            out.frames.push(row[0] as usize);
            out.coords.push([row[1], row[2]]);
            out.mask.0.push(row[3] != 0.0);
        }
        Ok(out)
    }
}

fn color_distance(p: [u8; 3], c: [u8; 3]) -> f64 {
    let d = [0, 1, 2].map(|k| p[k] as f64 - c[k] as f64);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Weighted centroid (raster `u, v`) of the largest 4-connected blob within
/// `tol` of `color`. Weights fall linearly from 1 at the exact color to 0 at
/// `tol`, which approximates partial pixel coverage on anti-aliased edges.
pub fn detect_centroid(frame: &RgbFrame, color: [u8; 3], tol: f64) -> Option<[f64; 2]> {
    let (w, h) = (frame.width as usize, frame.height as usize);
    let weight: Vec<f32> = frame
        .data
        .chunks_exact(3)
        .map(|p| {
            let d = color_distance([p[0], p[1], p[2]], color);
            if d <= tol {
                (1.0 - d / (tol + 1e-9)).max(1e-6) as f32
            } else {
                0.0
            }
        })
        .collect();
    let mut seen = vec![false; w * h];
    let mut best: Option<(usize, f64, f64, f64)> = None;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || weight[start] == 0.0 {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut n, mut sw, mut su, mut sv) = (0usize, 0.0, 0.0, 0.0);
        while let Some(k) = stack.pop() {
            let (x, y) = (k % w, k / w);
            let wk = weight[k] as f64;
            n += 1;
            sw += wk;
            su += wk * x as f64;
            sv += wk * y as f64;
            let mut visit = |j: usize| {
                if !seen[j] && weight[j] > 0.0 {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(k - 1);
            }
            if x + 1 < w {
                visit(k + 1);
            }
            if y > 0 {
                visit(k - w);
            }
            if y + 1 < h {
                visit(k + w);
            }
        }
        if best.is_none_or(|b| n > b.0) {
            best = Some((n, sw, su, sv));
        }
    }
    let (n, sw, su, sv) = best?;
    (n >= MIN_AREA).then(|| [su / sw, sv / sw])
}

/// Per-frame detection, no temporal smoothing.
pub fn track_sequence(frames: &[RgbFrame], color: [u8; 3], tol: f64) -> PixelTrack {
    let found: Vec<Option<[f64; 2]>> = frames.par_iter().map(|f| detect_centroid(f, color, tol)).collect();
    assemble(found)
}

fn assemble(found: Vec<Option<[f64; 2]>>) -> PixelTrack {
    PixelTrack {
        frames: (0..found.len()).collect(),
        coords: found.iter().map(|c| c.unwrap_or([f64::NAN; 2])).collect(),
        mask: ValidityMask(found.iter().map(Option::is_some).collect()),
    }
}

/// Render, add frame noise and track each frame without keeping the whole
/// sequence in memory.
pub fn render_and_track(
    truth: &PixelTrack,
    marker: &MarkerSpec,
    config: &RenderConfig,
    noise_level: f64,
    tol: f64,
) -> Result<PixelTrack> {
    if !(noise_level >= 0.0 && noise_level.is_finite()) {
        return Err(Error::Validation(format!("noise level must be >= 0, got {noise_level}")));
    }
    let bg = config.background.generate(config.image_size, config.seed);
    let noise_seed = derive_seed(config.seed, 0x4E);
    let found: Vec<Option<[f64; 2]>> = (0..truth.len())
        .into_par_iter()
        .map(|i| {
            let center = truth.mask.is_valid(i).then_some(truth.coords[i]);
            let frame = render_frame(&bg, center, marker, truth.frames[i], config.seed);
            let frame = apply_noise_frame(&frame, noise_level, derive_seed(noise_seed, i as u64));
            detect_centroid(&frame, marker.color, tol)
        })
        .collect();
    let mut out = assemble(found);
    out.frames = truth.frames.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{apply_block_missing, apply_noise, render_frames, Background, MarkerSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(seed: u64) -> RenderConfig {
        RenderConfig {
            image_size: (256, 256),
            background: Background::pick(seed),
            seed,
        }
    }

    #[test]
    fn clean_disk_is_found() {
        let bg = Background::Blobs.generate((512, 512), 1);
        let m = MarkerSpec::default();
        let f = render_frame(&bg, Some([100.0, 200.0]), &m, 0, 1);
        let c = detect_centroid(&f, m.color, DEFAULT_TOL).unwrap();
        assert!((c[0] - 100.0).abs() <= 0.5 && (c[1] - 200.0).abs() <= 0.5, "{c:?}");
        assert!(detect_centroid(&bg, m.color, DEFAULT_TOL).is_none());
    }

    #[test]
    fn noisy_frames_mostly_within_1_5_px() {
        let m = MarkerSpec {
            size_px: 8.0,
            ..MarkerSpec::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut good = 0;
        let total = 500;
        for i in 0..total {
            let bg = Background::pick(i as u64).generate((96, 96), i as u64);
            let c = [rng.random_range(20.0..76.0), rng.random_range(20.0..76.0)];
            let f = render_frame(&bg, Some(c), &m, i, 9);
            let f = apply_noise_frame(&f, 0.1, i as u64);
            if let Some(d) = detect_centroid(&f, m.color, DEFAULT_TOL) {
                if (d[0] - c[0]).hypot(d[1] - c[1]) <= 1.5 {
                    good += 1;
                }
            }
        }
        assert!(good as f64 >= 0.99 * total as f64, "{good}/{total}");
    }

    #[test]
    fn occlusion_round_trip() {
        let n = 200;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coords: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(30.0..226.0), rng.random_range(30.0..226.0)]).collect();
        let mask = apply_block_missing(&ValidityMask::all_valid(n), 0.2, 3).unwrap();
        let truth = PixelTrack {
            frames: (0..n).collect(),
            coords: coords.iter().map(|c| [c[0].round(), c[1].round()]).collect(),
            mask: mask.clone(),
        };
        let m = MarkerSpec::default();
        let frames = render_frames(&truth, &m, &cfg(8));
        let tracked = track_sequence(&frames, m.color, DEFAULT_TOL);
        assert_eq!(tracked.mask, mask);
        let mut se = 0.0;
        for i in 0..n {
            if mask.is_valid(i) {
                se += (tracked.coords[i][0] - truth.coords[i][0]).powi(2) + (tracked.coords[i][1] - truth.coords[i][1]).powi(2);
            }
        }
        let rmse = (se / mask.count_valid() as f64).sqrt();
        assert!(rmse <= 0.7, "{rmse}");
        let streamed = render_and_track(&truth, &m, &cfg(8), 0.0, DEFAULT_TOL).unwrap();
        assert_eq!(streamed.mask, tracked.mask);
        for i in 0..n {
            if mask.is_valid(i) {
                assert_eq!(streamed.coords[i], tracked.coords[i]);
            }
        }
    }

    #[test]
    fn unmatched_color_gives_empty_mask() {
        let truth = PixelTrack {
            frames: vec![0, 1],
            coords: vec![[50.0, 50.0]; 2],
            mask: ValidityMask::all_valid(2),
        };
        let frames = render_frames(&truth, &MarkerSpec::default(), &cfg(1));
        let t = track_sequence(&frames, [255, 255, 0], 0.0);
        assert_eq!(t.mask.count_valid(), 0);
        let noisy = apply_noise(&frames, 0.0, 0).unwrap();
        assert_eq!(noisy, frames);
    }

    #[test]
    fn csv_round_trip() {
        let t = PixelTrack {
            frames: vec![0, 1, 2],
            coords: vec![[1.5, 2.25], [3.0, 4.0], [5.125, -1.0]],
            mask: ValidityMask(vec![true, false, true]),
        };
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(PixelTrack::read_csv(buf.as_slice()).unwrap(), t);
    }
}
