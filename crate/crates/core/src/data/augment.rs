use rand::Rng as _;

use super::Image;
use crate::rng::Rng;

/// Zero padding added on every side before a random crop.
pub const CROP_PAD: usize = 4;

const FLIP_PROB: f64 = 0.5;
const CROP_PROB: f64 = 0.5;

pub fn flip_horizontal(img: &Image) -> Image {
    let mut out = img.clone();
    let (h, w, c) = img.shape();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let o = out.offset(y, x, ch);
                out.pixels[o] = img.get(y, w - 1 - x, ch);
            }
        }
    }
    out
}

/// Shifts the image by `(dy, dx)` inside a zero border of [`CROP_PAD`] pixels;
/// offsets are in `0..=2*CROP_PAD` and `(CROP_PAD, CROP_PAD)` is the identity.
pub fn random_crop(img: &Image, dy: usize, dx: usize) -> Image {
    let (h, w, c) = img.shape();
    let mut out = img.clone();
    out.pixels.iter_mut().for_each(|p| *p = 0.0);
    for y in 0..h {
        let sy = (y + dy) as isize - CROP_PAD as isize;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        for x in 0..w {
            let sx = (x + dx) as isize - CROP_PAD as isize;
            if sx < 0 || sx >= w as isize {
                continue;
            }
            for ch in 0..c {
                let o = out.offset(y, x, ch);
                out.pixels[o] = img.get(sy as usize, sx as usize, ch);
            }
        }
    }
    out
}

/// Random horizontal flip and pad-then-crop, each with probability 0.5.
pub fn augment(img: &Image, rng: &mut Rng) -> Image {
    let flip = rng.random_bool(FLIP_PROB);
    let crop = rng.random_bool(CROP_PROB);
    let mut out = if flip { flip_horizontal(img) } else { img.clone() };
    if crop {
        let dy = rng.random_range(0..=2 * CROP_PAD);
        let dx = rng.random_range(0..=2 * CROP_PAD);
        out = random_crop(&out, dy, dx);
    }
    out
}
