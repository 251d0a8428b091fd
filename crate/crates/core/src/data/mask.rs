//! Occlusion masks: random square, periodic grid and fixed-area block.
//! Masked pixels are set to zero; everything outside the holes is untouched.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Area fraction range for the default random square mask.
pub const RANDOM_FRACTION: (f64, f64) = (0.2, 0.4);
/// Area fraction of the block mask.
pub const BLOCK_FRACTION: f64 = 0.3;
/// Hole-to-period ratio of the default grid mask.
pub const GRID_RATIO: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskRegion {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl MaskRegion {
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedImage {
    pub image: Image,
    /// Disjoint holes; a single entry for the square masks.
    pub regions: Vec<MaskRegion>,
}

impl MaskedImage {
    pub fn is_masked(&self, y: usize, x: usize) -> bool {
        self.regions.iter().any(|r| r.contains(y, x))
    }

    pub fn masked_pixels(&self) -> usize {
        self.regions.iter().map(MaskRegion::area).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskStrategy {
    #[default]
    Random,
    Grid,
    Block,
}

impl MaskStrategy {
    pub fn apply(self, img: &Image, rng: &mut Rng) -> Result<MaskedImage> {
        match self {
            MaskStrategy::Random => mask_random(img, rng),
            MaskStrategy::Grid => mask_grid_default(img, rng),
            MaskStrategy::Block => mask_block(img, rng),
        }
    }
}

fn square_side(fraction: f64, h: usize, w: usize) -> usize {
    (fraction * (h * w) as f64).sqrt().round() as usize
}

/// Smallest and largest side the random mask can take on an `h`×`w` image.
pub fn random_side_range(h: usize, w: usize) -> Result<(usize, usize)> {
    let fit = h.min(w);
    let lo = square_side(RANDOM_FRACTION.0, h, w);
    if lo > fit || lo == 0 {
        return Err(Error::InvalidInput(format!("image {h}x{w} cannot host a square mask of side {lo}")));
    }
    Ok((lo, square_side(RANDOM_FRACTION.1, h, w).min(fit)))
}

fn place_square(img: &Image, side: usize, rng: &mut Rng) -> MaskedImage {
    let top = rng.random_range(0..=img.height() - side);
    let left = rng.random_range(0..=img.width() - side);
    let region = MaskRegion { top, left, height: side, width: side };
    let mut image = img.clone();
    image.zero_rect(&region);
    MaskedImage { image, regions: vec![region] }
}

/// Square hole whose area is a uniform fraction in [0.2, 0.4] of the image.
pub fn mask_random(img: &Image, rng: &mut Rng) -> Result<MaskedImage> {
    random_side_range(img.height(), img.width())?;
    let f = rng.random_range(RANDOM_FRACTION.0..=RANDOM_FRACTION.1);
    mask_random_with_fraction(img, f, rng)
}

/// Random-mask rule with the area fraction fixed by the caller.
pub fn mask_random_with_fraction(img: &Image, fraction: f64, rng: &mut Rng) -> Result<MaskedImage> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!("mask fraction {fraction} not in (0, 1]")));
    }
    let (h, w) = (img.height(), img.width());
    let side = square_side(fraction, h, w).clamp(1, h.min(w));
    Ok(place_square(img, side, rng))
}

pub fn block_side(h: usize, w: usize) -> usize {
    square_side(BLOCK_FRACTION, h, w)
}

/// Square hole covering 30% of the image area, uniformly placed.
pub fn mask_block(img: &Image, rng: &mut Rng) -> Result<MaskedImage> {
    let side = block_side(img.height(), img.width());
    if side > img.height().min(img.width()) {
        return Err(Error::InvalidInput(format!(
            "image {}x{} cannot host a block of side {side}",
            img.height(),
            img.width()
        )));
    }
    Ok(place_square(img, side, rng))
}

/// Periodic grid of square holes with an explicit phase.
///
/// Holes start at `phase + n * unit` on each axis (any integer `n`) and have
/// side `round(ratio * unit)`; holes crossing the border are clipped.
pub fn mask_grid_with_phase(img: &Image, unit: usize, ratio: f64, phase: (usize, usize)) -> Result<MaskedImage> {
    if unit < 2 {
        return Err(Error::InvalidInput(format!("grid unit {unit} must be at least 2")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidInput(format!("grid ratio {ratio} not in (0, 1)")));
    }
    let hole = (ratio * unit as f64).round() as usize;
    let spans = |len: usize, phase: usize| -> Vec<(usize, usize)> {
        let phase = phase % unit;
        // a hole starting one period before the phase can still poke into the image
        let mut out = Vec::new();
        if phase > 0 && hole > unit - phase {
            out.push((0, hole - (unit - phase)));
        }
        let mut start = phase;
        while start < len {
            out.push((start, hole.min(len - start)));
            start += unit;
        }
        out.retain(|&(_, l)| l > 0);
        out
    };
    let rows = spans(img.height(), phase.0);
    let cols = spans(img.width(), phase.1);
    let mut image = img.clone();
    let mut regions = Vec::with_capacity(rows.len() * cols.len());
    for &(top, height) in &rows {
        for &(left, width) in &cols {
            let r = MaskRegion { top, left, height, width };
            image.zero_rect(&r);
            regions.push(r);
        }
    }
    Ok(MaskedImage { image, regions })
}

/// Grid mask with a uniformly random phase on each axis.
pub fn mask_grid(img: &Image, rng: &mut Rng, unit: usize, ratio: f64) -> Result<MaskedImage> {
    if unit < 2 {
        return Err(Error::InvalidInput(format!("grid unit {unit} must be at least 2")));
    }
    let phase = (rng.random_range(0..unit), rng.random_range(0..unit));
    mask_grid_with_phase(img, unit, ratio, phase)
}

/// Grid mask with the GridMask defaults: unit uniform in [H/8, H/2], ratio 0.5.
pub fn mask_grid_default(img: &Image, rng: &mut Rng) -> Result<MaskedImage> {
    let side = img.height().min(img.width());
    let lo = (side / 8).max(2);
    let hi = (side / 2).max(lo);
    let unit = rng.random_range(lo..=hi);
    mask_grid(img, rng, unit, GRID_RATIO)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive;

    fn noisy(h: usize, w: usize, c: usize, seed: u64) -> Image {
        let mut rng = derive(seed, &[]);
        let px = (0..h * w * c).map(|_| rng.random_range(0.05..1.0)).collect();
        Image::new(h, w, c, px).unwrap()
    }

    fn assert_mask_contract(src: &Image, m: &MaskedImage) {
        for r in &m.regions {
            assert!(r.top + r.height <= src.height() && r.left + r.width <= src.width());
        }
        for y in 0..src.height() {
            for x in 0..src.width() {
                for c in 0..src.channels() {
                    if m.is_masked(y, x) {
                        assert_eq!(m.image.get(y, x, c), 0.0);
                    } else {
                        assert_eq!(m.image.get(y, x, c).to_bits(), src.get(y, x, c).to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn random_side_set_on_32() {
        // enumerate round(sqrt(f * 1024)) over a fine grid of f in [0.2, 0.4]
        let mut expected: Vec<usize> = (0..=20_000)
            .map(|i| 0.2 + 0.2 * i as f64 / 20_000.0)
            .map(|f| (f * 1024.0f64).sqrt().round() as usize)
            .collect();
        expected.dedup();
        assert_eq!(expected, (14..=20).collect::<Vec<_>>());
        assert_eq!(random_side_range(32, 32).unwrap(), (14, 20));

        let img = noisy(32, 32, 3, 1);
        let mut rng = derive(2, &[]);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..3000 {
            let m = mask_random(&img, &mut rng).unwrap();
            let r = m.regions[0];
            assert_eq!(r.height, r.width);
            seen.insert(r.height);
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), expected);
    }

    #[test]
    fn random_fraction_quarter() {
        let img = noisy(32, 32, 3, 3);
        let mut rng = derive(4, &[]);
        let m = mask_random_with_fraction(&img, 0.25, &mut rng).unwrap();
        assert_eq!(m.regions[0].height, 16);
        assert_eq!(m.masked_pixels(), 256);
        let zeros = m.image.pixels().iter().filter(|p| **p == 0.0).count();
        assert_eq!(zeros, 256 * 3);
        assert_mask_contract(&img, &m);
    }

    #[test]
    fn random_mask_too_small() {
        // 8x200: smallest square side round(sqrt(320)) = 18 does not fit in 8 rows
        let img = noisy(8, 200, 1, 5);
        assert!(mask_random(&img, &mut derive(0, &[])).is_err());
        assert!(mask_block(&img, &mut derive(0, &[])).is_err());
    }

    #[test]
    fn block_mask_32() {
        assert_eq!(block_side(32, 32), 18);
        let img = noisy(32, 32, 3, 6);
        let mut rng = derive(7, &[]);
        for i in 0..10_000 {
            let m = mask_block(&img, &mut rng).unwrap();
            let r = m.regions[0];
            assert_eq!((r.height, r.width), (18, 18));
            assert!(r.top + 18 <= 32 && r.left + 18 <= 32);
            if i < 20 {
                assert_mask_contract(&img, &m);
                assert_eq!(m.masked_pixels(), 324);
            }
        }
    }

    #[test]
    fn grid_tiny_ratio_is_identity() {
        let img = noisy(32, 32, 3, 8);
        let m = mask_grid_with_phase(&img, 8, 0.01, (3, 5)).unwrap();
        assert!(m.regions.is_empty());
        assert_eq!(m.image, img);
    }

    #[test]
    fn grid_single_period() {
        let img = noisy(32, 32, 3, 9);
        let m = mask_grid_with_phase(&img, 32, 0.5, (0, 0)).unwrap();
        assert_eq!(m.regions, vec![MaskRegion { top: 0, left: 0, height: 16, width: 16 }]);
        assert_mask_contract(&img, &m);
    }

    #[test]
    fn grid_wraps_partial_holes() {
        let img = noisy(16, 16, 1, 10);
        // unit 8, hole 4, phase 6: the hole starting at -2 leaks rows 0..2
        let m = mask_grid_with_phase(&img, 8, 0.5, (6, 0)).unwrap();
        assert_mask_contract(&img, &m);
        let rows: Vec<usize> = (0..16).filter(|&y| m.is_masked(y, 0)).collect();
        assert_eq!(rows, vec![0, 1, 6, 7, 8, 9, 14, 15]);
    }

    #[test]
    fn grid_coverage_tracks_ratio() {
        let img = noisy(64, 64, 1, 11);
        let mut rng = derive(12, &[]);
        let (mut sum_frac, mut sum_expect) = (0.0, 0.0);
        let draws = 2000;
        for i in 0..draws {
            let unit = rng.random_range(8..=32);
            let m = mask_grid(&img, &mut rng, unit, GRID_RATIO).unwrap();
            if i < 10 {
                assert_mask_contract(&img, &m);
            }
            let frac = m.masked_pixels() as f64 / 4096.0;
            // rows covered: full periods plus a partial one whose size depends on phase
            let side = (GRID_RATIO * unit as f64).round() as usize;
            let (full, rem) = (64 / unit, 64 % unit);
            let lo = (full * side + rem.saturating_sub(unit - side)) as f64 / 64.0;
            let hi = (full * side + rem.min(side)) as f64 / 64.0;
            assert!(frac >= lo * lo - 1e-12 && frac <= hi * hi + 1e-12, "unit {unit}: fraction {frac}");
            let hole = side as f64 / unit as f64;
            sum_frac += frac;
            sum_expect += hole * hole;
        }
        let (mean_frac, mean_expect) = (sum_frac / draws as f64, sum_expect / draws as f64);
        assert!((mean_frac - mean_expect).abs() <= 0.1 * mean_expect, "{mean_frac} vs {mean_expect}");
        assert!((mean_frac - GRID_RATIO * GRID_RATIO).abs() <= 0.1 * GRID_RATIO * GRID_RATIO);
    }

    #[test]
    fn grid_errors() {
        let img = noisy(16, 16, 1, 13);
        assert!(mask_grid_with_phase(&img, 1, 0.5, (0, 0)).is_err());
        assert!(mask_grid_with_phase(&img, 4, 1.0, (0, 0)).is_err());
        assert!(mask_grid_with_phase(&img, 4, 0.0, (0, 0)).is_err());
    }

    #[test]
    fn same_seed_same_mask() {
        let img = noisy(32, 32, 3, 14);
        for strategy in [MaskStrategy::Random, MaskStrategy::Grid, MaskStrategy::Block] {
            let a = strategy.apply(&img, &mut derive(99, &[1])).unwrap();
            let b = strategy.apply(&img, &mut derive(99, &[1])).unwrap();
            assert_eq!(a, b);
            assert_mask_contract(&img, &a);
        }
    }
}
