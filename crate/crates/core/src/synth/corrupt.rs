use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tracking::PixelTrack;

/// Length of one random-missing block as a fraction of the sequence.
pub const BLOCK_FRACTION: f64 = 0.01;
/// Number of contiguous gaps in the fiber-missing pattern.
pub const FIBER_BLOCKS: usize = 5;
/// Largest accepted missing rate.
pub const MAX_MISSING_RATE: f64 = 0.9;

/// Per-frame validity flags; `true` means the measurement is usable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValidityMask(pub Vec<bool>);

impl From<Vec<bool>> for ValidityMask {
    fn from(v: Vec<bool>) -> Self {
        Self(v)
    }
}

impl ValidityMask {
    pub fn all_valid(n: usize) -> Self {
        Self(vec![true; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn count_valid(&self) -> usize {
        self.0.iter().filter(|v| **v).count()
    }

    pub fn count_invalid(&self) -> usize {
        self.len() - self.count_valid()
    }

    /// Frame-wise AND.
    pub fn and(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::Size(format!("mask lengths differ: {} vs {}", self.len(), other.len())));
        }
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| *a && *b).collect()))
    }

    /// Maximal runs of invalid frames as `(start, len)`.
    pub fn gaps(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < self.len() {
            if self.0[i] {
                i += 1;
                continue;
            }
            let start = i;
            while i < self.len() && !self.0[i] {
                i += 1;
            }
            out.push((start, i - start));
        }
        out
    }
}

/// Start indices for non-overlapping blocks of the given lengths, placed
/// uniformly at random in `0..n` (stars and bars). `sep` valid frames are
/// kept between neighbouring blocks.
fn place_blocks(n: usize, lengths: &[usize], sep: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let k = lengths.len();
    let total: usize = lengths.iter().sum::<usize>() + sep * k.saturating_sub(1);
    if total > n {
        return Err(Error::Packing {
            blocks: lengths.len(),
            block_len: lengths.iter().copied().max().unwrap_or(0),
            frames: n,
        });
    }
    let slots = n - total + k;
    let mut picks = sample(rng, slots, k).into_vec();
    picks.sort_unstable();
    let mut starts = Vec::with_capacity(k);
    let mut used = 0;
    for (j, (p, len)) in picks.iter().zip(lengths).enumerate() {
        starts.push(p - j + used);
        used += len + sep;
    }
    Ok(starts)
}

fn mark(mask: &ValidityMask, starts: &[usize], lengths: &[usize]) -> ValidityMask {
    let mut out = mask.clone();
    for (s, len) in starts.iter().zip(lengths) {
        for f in &mut out.0[*s..s + len] {
            *f = false;
        }
    }
    out
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..=MAX_MISSING_RATE).contains(&rate) {
        return Err(Error::Validation(format!("missing rate must be in [0, {MAX_MISSING_RATE}], got {rate}")));
    }
    Ok(())
}

/// Invalidate `ceil(rate / 1%)` non-overlapping blocks of 1% of the frames
/// each, at random positions.
pub fn apply_block_missing(mask: &ValidityMask, rate: f64, seed: u64) -> Result<ValidityMask> {
    check_rate(rate)?;
    let n = mask.len();
    let n_blocks = (rate / BLOCK_FRACTION - 1e-9).ceil().max(0.0) as usize;
    if n_blocks == 0 {
        return Ok(mask.clone());
    }
    let block_len = ((BLOCK_FRACTION * n as f64).round() as usize).max(1);
    let lengths = vec![block_len; n_blocks];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = place_blocks(n, &lengths, 0, &mut rng)?;
    Ok(mark(mask, &starts, &lengths))
}

/// Invalidate five separated contiguous blocks totalling `rate` of the
/// frames.
pub fn apply_fiber_missing(mask: &ValidityMask, rate: f64, seed: u64) -> Result<ValidityMask> {
    check_rate(rate)?;
    let n = mask.len();
    let total = (rate * n as f64).round() as usize;
    if total == 0 {
        return Ok(mask.clone());
    }
    let lengths: Vec<usize> = (0..FIBER_BLOCKS)
        .map(|j| total / FIBER_BLOCKS + usize::from(j < total % FIBER_BLOCKS))
        .filter(|l| *l > 0)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = place_blocks(n, &lengths, 1, &mut rng)?;
    Ok(mark(mask, &starts, &lengths))
}

/// Gaussian jitter with standard deviation `std_px` on every coordinate,
/// re-rounded to integer pixels when `quantize` is set.
pub fn apply_track_noise(track: &PixelTrack, std_px: f64, seed: u64, quantize: bool) -> Result<PixelTrack> {
    if !(std_px >= 0.0 && std_px.is_finite()) {
        return Err(Error::Validation(format!("noise std must be >= 0, got {std_px}")));
    }
    if std_px == 0.0 {
        return Ok(track.clone());
    }
    let normal = Normal::new(0.0, std_px).expect("finite std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = track.clone();
    for c in &mut out.coords {
        for v in c.iter_mut() {
            *v += normal.sample(&mut rng);
            if quantize {
                *v = v.round();
            }
        }
    }
    Ok(out)
}
