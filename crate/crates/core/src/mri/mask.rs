use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Phase-encode line mask: `lines[col]` is true when that k-space column was
/// acquired.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    pub lines: Vec<bool>,
    pub acceleration: f64,
    pub center_fraction: f64,
    pub seed: u64,
}

/// First column and length of the fully sampled center block.
pub fn center_block(width: usize, center_fraction: f64) -> (usize, usize) {
    let count = (center_fraction * width as f64).round() as usize;
    ((width - count + 1) / 2, count)
}

/// Keeps a centered block of `round(center_fraction * width)` lines and then
/// draws exactly enough further lines, uniformly without replacement, to
/// reach `round(width / acceleration)` in total.
pub fn generate_mask(
    width: usize,
    acceleration: f64,
    center_fraction: f64,
    seed: u64,
) -> Result<SamplingMask> {
    if width < 8 {
        return Err(Error::InvalidArgument(format!(
            "mask width must be at least 8, got {width}"
        )));
    }
    if !(acceleration > 1.0 && acceleration.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "acceleration must be > 1, got {acceleration}"
        )));
    }
    if !(0.0..1.0).contains(&center_fraction) {
        return Err(Error::InvalidArgument(format!(
            "center fraction must lie in [0, 1), got {center_fraction}"
        )));
    }
    let target = (width as f64 / acceleration).round() as usize;
    let (start, count) = center_block(width, center_fraction);
    if count > target {
        return Err(Error::InvalidArgument(format!(
            "center block of {count} lines exceeds the {target}-line budget of {acceleration}x on width {width}"
        )));
    }

    let mut lines = vec![false; width];
    lines[start..start + count].fill(true);
    let outside: Vec<usize> = (0..width).filter(|&c| !lines[c]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for pick in sample(&mut rng, outside.len(), target - count) {
        lines[outside[pick]] = true;
    }
    Ok(SamplingMask {
        lines,
        acceleration,
        center_fraction,
        seed,
    })
}

impl SamplingMask {
    /// A mask rebuilt from its lines alone (as stored on disk). Acceleration
    /// is the realised ratio, the center fraction is the contiguous sampled
    /// run through the middle column, and the seed is unknown (0).
    pub fn from_lines(lines: Vec<bool>) -> Self {
        let width = lines.len();
        let kept = lines.iter().filter(|&&l| l).count();
        let mid = width / 2;
        let center = if lines.get(mid).copied().unwrap_or(false) {
            let left = (0..=mid).rev().take_while(|&c| lines[c]).count();
            let right = (mid + 1..width).take_while(|&c| lines[c]).count();
            left + right
        } else {
            0
        };
        Self {
            acceleration: if kept == 0 {
                f64::INFINITY
            } else {
                width as f64 / kept as f64
            },
            center_fraction: center as f64 / width.max(1) as f64,
            seed: 0,
            lines,
        }
    }

    pub fn full(width: usize) -> Self {
        Self::from_lines(vec![true; width])
    }

    pub fn width(&self) -> usize {
        self.lines.len()
    }

    pub fn kept(&self) -> usize {
        self.lines.iter().filter(|&&l| l).count()
    }
}
