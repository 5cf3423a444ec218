use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, MarkerShape, MarkerSpec};
use crate::error::{Error, Result};
use crate::tracking::PixelTrack;

/// Interleaved RGB8 image, row-major, origin top-left.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbFrame {
    pub fn filled(width: u32, height: u32, color: [u8; 3]) -> Self {
        let data = color.iter().copied().cycle().take(3 * (width * height) as usize).collect();
        Self { width, height, data }
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let k = 3 * (y * self.width + x) as usize;
        [self.data[k], self.data[k + 1], self.data[k + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, c: [u8; 3]) {
        let k = 3 * (y * self.width + x) as usize;
        self.data[k..k + 3].copy_from_slice(&c);
    }
}

pub type FrameSequence = Vec<RgbFrame>;

/// Procedural background textures. Palettes keep the red channel low so a
/// saturated red marker stays separable by color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    Gradient,
    Checker,
    Blobs,
    Stripes,
}

impl Background {
    pub const ALL: [Background; 4] = [Self::Gradient, Self::Checker, Self::Blobs, Self::Stripes];

    /// One of [`Self::ALL`], picked by seed.
    pub fn pick(seed: u64) -> Self {
        Self::ALL[(derive_seed(seed, 0xB6) % Self::ALL.len() as u64) as usize]
    }

    pub fn generate(self, size: (u32, u32), seed: u64) -> RgbFrame {
        let (w, h) = size;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let color = |rng: &mut ChaCha8Rng| -> [f64; 3] {
            [
                rng.random_range(10.0..60.0),
                rng.random_range(60.0..200.0),
                rng.random_range(60.0..220.0),
            ]
        };
        let (c0, c1) = (color(&mut rng), color(&mut rng));
        let blobs: Vec<([f64; 2], f64, [f64; 3])> = (0..6)
            .map(|_| {
                let c = color(&mut rng);
                ([rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64)], rng.random_range(30.0..120.0), c)
            })
            .collect();
        let period = rng.random_range(24.0..64.0);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let mut frame = RgbFrame::filled(w, h, [0; 3]);
        for y in 0..h {
            for x in 0..w {
                let (fx, fy) = (x as f64, y as f64);
                let mix = |a: [f64; 3], b: [f64; 3], t: f64| [0, 1, 2].map(|k| a[k] + (b[k] - a[k]) * t);
                let c = match self {
                    Self::Gradient => mix(c0, c1, (fx * angle.cos() + fy * angle.sin()).abs() / (w + h) as f64),
                    Self::Checker => {
                        let odd = ((fx / period).floor() + (fy / period).floor()) as i64 % 2 != 0;
                        if odd { c1 } else { c0 }
                    }
                    Self::Stripes => {
                        let t = 0.5 + 0.5 * ((fx * angle.cos() + fy * angle.sin()) * std::f64::consts::TAU / period).sin();
                        mix(c0, c1, t)
                    }
                    Self::Blobs => {
                        let mut acc = c0;
                        for (p, r, bc) in &blobs {
                            let d2 = (fx - p[0]).powi(2) + (fy - p[1]).powi(2);
                            let wgt = (-d2 / (2.0 * r * r)).exp();
                            acc = mix(acc, *bc, wgt);
                        }
                        acc
                    }
                };
                frame.set_pixel(x, y, c.map(|v| v.round().clamp(0.0, 255.0) as u8));
            }
        }
        frame
    }
}

fn default_size() -> (u32, u32) {
    (512, 512)
}

/// Rendering options shared by all frames of a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    #[serde(default = "default_size")]
    pub image_size: (u32, u32),
    pub background: Background,
    #[serde(default)]
    pub seed: u64,
}

impl RenderConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            image_size: default_size(),
            background: Background::pick(seed),
            seed,
        }
    }
}

const SUPERSAMPLE: usize = 4;

/// Composite the marker centred at raster `center` over `background`.
/// Pixel `(i, j)` covers `[i - 0.5, i + 0.5] x [j - 0.5, j + 0.5]`.
pub fn render_frame(
    background: &RgbFrame,
    center: Option<[f64; 2]>,
    marker: &MarkerSpec,
    frame_index: usize,
    seed: u64,
) -> RgbFrame {
    let mut frame = background.clone();
    let Some([cu, cv]) = center else {
        return frame;
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, frame_index as u64));
    let jitter = if marker.size_jitter > 0.0 {
        rng.random_range(-marker.size_jitter..marker.size_jitter)
    } else {
        0.0
    };
    let radius = marker.size_px * (1.0 + jitter);
    let phase = if marker.self_rotation {
        rng.random_range(0.0..std::f64::consts::TAU)
    } else {
        0.0
    };
    let sides = match marker.shape {
        MarkerShape::Disk => 0,
        MarkerShape::Square => 4,
        MarkerShape::Polygon => marker.sides as usize,
    };
    let normals: Vec<[f64; 2]> = (0..sides)
        .map(|k| {
            let a = phase + std::f64::consts::TAU * k as f64 / sides as f64;
            [a.cos(), a.sin()]
        })
        .collect();
    let apothem = if sides > 0 { radius * (std::f64::consts::PI / sides as f64).cos() } else { 0.0 };
    let inside = |dx: f64, dy: f64| {
        if sides == 0 {
            dx * dx + dy * dy <= radius * radius
        } else {
            normals.iter().all(|n| dx * n[0] + dy * n[1] <= apothem)
        }
    };
    let (w, h) = (background.width as i64, background.height as i64);
    let x0 = ((cu - radius).floor() as i64 - 1).max(0);
    let x1 = ((cu + radius).ceil() as i64 + 1).min(w - 1);
    let y0 = ((cv - radius).floor() as i64 - 1).max(0);
    let y1 = ((cv + radius).ceil() as i64 + 1).min(h - 1);
    let total = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f64 - 0.5 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                    let py = y as f64 - 0.5 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                    hits += usize::from(inside(px - cu, py - cv));
                }
            }
            if hits == 0 {
                continue;
            }
            let alpha = hits as f64 / total;
            let bg = frame.pixel(x as u32, y as u32);
            let c = [0, 1, 2].map(|k| (bg[k] as f64 * (1.0 - alpha) + marker.color[k] as f64 * alpha).round() as u8);
            frame.set_pixel(x as u32, y as u32, c);
        }
    }
    frame
}

/// Render one frame per track sample; invalid samples show only the
/// background.
pub fn render_frames(track: &PixelTrack, marker: &MarkerSpec, config: &RenderConfig) -> FrameSequence {
    let bg = config.background.generate(config.image_size, config.seed);
    (0..track.len())
        .into_par_iter()
        .map(|i| {
            let center = track.mask.is_valid(i).then_some(track.coords[i]);
            render_frame(&bg, center, marker, track.frames[i], config.seed)
        })
        .collect()
}

/// Additive Gaussian pixel noise, std `level * 255`, clamped to `0..=255`.
pub fn apply_noise_frame(frame: &RgbFrame, level: f64, seed: u64) -> RgbFrame {
    if level <= 0.0 {
        return frame.clone();
    }
    let normal = Normal::new(0.0, level * 255.0).expect("finite level");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = frame.clone();
    for v in &mut out.data {
        *v = (*v as f64 + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// [`apply_noise_frame`] on every frame with per-frame derived seeds.
pub fn apply_noise(frames: &[RgbFrame], level: f64, seed: u64) -> Result<FrameSequence> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(Error::Validation(format!("noise level must be >= 0, got {level}")));
    }
    Ok(frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| apply_noise_frame(f, level, derive_seed(seed, i as u64)))
        .collect())
}

pub fn write_ppm(path: &Path, frame: &RgbFrame) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P6\n{} {}\n255\n", frame.width, frame.height)?;
    w.write_all(&frame.data)?;
    w.flush()?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<RgbFrame> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    let bad = |msg: &str| Error::Parse {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    };
    // header: magic, width, height, maxval separated by whitespace
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(bad("expected binary P6 with maxval 255"));
    }
    let width: u32 = fields[1].parse().map_err(|_| bad("bad width"))?;
    let height: u32 = fields[2].parse().map_err(|_| bad("bad height"))?;
    let n = 3 * (width * height) as usize;
    if bytes.len() < pos + n {
        return Err(bad("truncated pixel data"));
    }
    Ok(RgbFrame {
        width,
        height,
        data: bytes[pos..pos + n].to_vec(),
    })
}

/// JSON index for a raw RGB8 container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerIndex {
    pub width: u32,
    pub height: u32,
    pub n_frames: usize,
    pub data_file: PathBuf,
}

/// Write all frames back to back into `path` plus `path.json` index.
pub fn write_container(path: &Path, frames: &[RgbFrame]) -> Result<()> {
    let (width, height) = frames.first().map_or((0, 0), |f| (f.width, f.height));
    let mut w = BufWriter::new(File::create(path)?);
    for f in frames {
        if (f.width, f.height) != (width, height) {
            return Err(Error::Size("frames differ in size".into()));
        }
        w.write_all(&f.data)?;
    }
    w.flush()?;
    let index = ContainerIndex {
        width,
        height,
        n_frames: frames.len(),
        data_file: PathBuf::from(path.file_name().unwrap_or_default()),
    };
    std::fs::write(index_path(path), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}

fn index_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn read_container(path: &Path) -> Result<FrameSequence> {
    let index: ContainerIndex = serde_json::from_str(&std::fs::read_to_string(index_path(path))?)?;
    let bytes = std::fs::read(path)?;
    let n = 3 * (index.width * index.height) as usize;
    if bytes.len() != n * index.n_frames {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            msg: format!("expected {} bytes, found {}", n * index.n_frames, bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(n.max(1))
        .take(index.n_frames)
        .map(|c| RgbFrame {
            width: index.width,
            height: index.height,
            data: c.to_vec(),
        })
        .collect())
}
