//! Procedural identity dataset.
//!
//! Each identity is an object with its own body colour, size and a layout of
//! coloured parts. Every rendered image adds nuisance on top: a per-camera
//! background tint, mirrored orientation, translation, brightness and pixel
//! noise. Train and evaluation splits use disjoint identity sets.

use rand::Rng as _;
use rand_distr::{Distribution as _, Normal};

use super::{Dataset, Image, Sample, Split};
use crate::error::{Error, Result};
use crate::rng::{derive, Rng, TAG_SYNTH};

pub const NUM_CAMERAS: usize = 4;
const CHANNELS: usize = 3;
const NUM_PARTS: usize = 3;
const NOISE_STD: f64 = 0.05;
const BRIGHTNESS: (f64, f64) = (0.85, 1.15);
/// Camera backgrounds are mid grey shifted by at most this much per channel.
const CAMERA_TINT: f64 = 0.1;
const MIRROR_PROB: f64 = 0.5;
const MAX_BODY_WIDTH: f64 = 0.95;

#[derive(Debug)]
pub struct SyntheticData {
    pub train: Dataset,
    pub query: Dataset,
    pub gallery: Dataset,
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    y: f64,
    x: f64,
    h: f64,
    w: f64,
    color: [f64; 3],
}

struct Identity {
    body_h: f64,
    body_w: f64,
    body_color: [f64; 3],
    /// Parts in body-relative coordinates.
    parts: Vec<Rect>,
}

fn color(rng: &mut Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
}

impl Identity {
    fn sample(rng: &mut Rng) -> Self {
        let parts = (0..NUM_PARTS)
            .map(|_| {
                let h = rng.random_range(0.2..0.45);
                let w = rng.random_range(0.2..0.45);
                Rect {
                    y: rng.random_range(0.0..1.0 - h),
                    x: rng.random_range(0.0..1.0 - w),
                    h,
                    w,
                    color: color(rng, 0.0, 1.0),
                }
            })
            .collect();
        Self {
            body_h: rng.random_range(0.585..0.845),
            body_w: rng.random_range(0.715..1.04f64).min(MAX_BODY_WIDTH),
            body_color: color(rng, 0.1, 0.9),
            parts,
        }
    }
}

fn fill(canvas: &mut [f64], h: usize, w: usize, r: &Rect, scale: f64) {
    let y0 = r.y.round().max(0.0) as usize;
    let x0 = r.x.round().max(0.0) as usize;
    let y1 = ((r.y + r.h).round().max(0.0) as usize).min(h);
    let x1 = ((r.x + r.w).round().max(0.0) as usize).min(w);
    for y in y0..y1 {
        for x in x0..x1 {
            let o = (y * w + x) * CHANNELS;
            for c in 0..CHANNELS {
                canvas[o + c] = r.color[c] * scale;
            }
        }
    }
}

fn render(id: &Identity, background: &[f64; 3], h: usize, w: usize, rng: &mut Rng) -> Result<Image> {
    let (hf, wf) = (h as f64, w as f64);
    let mut px = vec![0.0; h * w * CHANNELS];
    // vertical background gradient, tinted by the camera
    let tilt = rng.random_range(-0.15..0.15);
    for y in 0..h {
        let g = 1.0 + tilt * (y as f64 / hf - 0.5);
        for x in 0..w {
            let o = (y * w + x) * CHANNELS;
            for c in 0..CHANNELS {
                px[o + c] = background[c] * g;
            }
        }
    }
    let max_shift = hf.min(wf) / 8.0;
    let bh = id.body_h * hf;
    let bw = id.body_w * wf;
    let by = (hf - bh) / 2.0 + rng.random_range(-max_shift..=max_shift);
    let bx = (wf - bw) / 2.0 + rng.random_range(-max_shift..=max_shift);
    let brightness = rng.random_range(BRIGHTNESS.0..=BRIGHTNESS.1);
    fill(&mut px, h, w, &Rect { y: by, x: bx, h: bh, w: bw, color: id.body_color }, brightness);
    let mirror = rng.random_bool(MIRROR_PROB);
    for p in &id.parts {
        let px_rel = if mirror { 1.0 - p.x - p.w } else { p.x };
        let r = Rect { y: by + p.y * bh, x: bx + px_rel * bw, h: p.h * bh, w: p.w * bw, color: p.color };
        fill(&mut px, h, w, &r, brightness);
    }

    let noise = Normal::new(0.0, NOISE_STD).expect("valid normal");
    for v in px.iter_mut() {
        *v = (*v + noise.sample(rng)).clamp(0.0, 1.0);
    }
    Image::new(h, w, CHANNELS, px)
}

/// Generates `num_ids × imgs_per_id` training images and an evaluation set of
/// the same size over a disjoint set of identities, split into one query per
/// identity and a gallery holding the rest. Fully determined by `seed`.
pub fn gen_synthetic(
    num_ids: usize,
    imgs_per_id: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<SyntheticData> {
    if num_ids < 2 || imgs_per_id < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 identities with 2 images each, got {num_ids} x {imgs_per_id}"
        )));
    }
    if height < super::MIN_SIDE || width < super::MIN_SIDE {
        return Err(Error::InvalidInput(format!("image size {height}x{width} too small")));
    }
    let backgrounds: Vec<[f64; 3]> = (0..NUM_CAMERAS)
        .map(|c| color(&mut derive(seed, &[TAG_SYNTH, 0, c as u64]), 0.5 - CAMERA_TINT, 0.5 + CAMERA_TINT))
        .collect();

    let render_set = |first_id: usize| -> Result<Vec<Sample>> {
        let mut samples = Vec::with_capacity(num_ids * imgs_per_id);
        for local in 0..num_ids {
            let identity = first_id + local;
            let desc = Identity::sample(&mut derive(seed, &[TAG_SYNTH, 1, identity as u64]));
            let mut rng = derive(seed, &[TAG_SYNTH, 2, identity as u64]);
            for _ in 0..imgs_per_id {
                let camera = rng.random_range(0..NUM_CAMERAS);
                let image = render(&desc, &backgrounds[camera], height, width, &mut rng)?;
                samples.push(Sample { image, identity, camera });
            }
        }
        Ok(samples)
    };

    let train = Dataset::new(Split::Train, render_set(0)?)?;
    let (mut query, mut gallery) = (Vec::new(), Vec::new());
    for (i, s) in render_set(num_ids)?.into_iter().enumerate() {
        if i % imgs_per_id == 0 {
            query.push(s);
        } else {
            gallery.push(s);
        }
    }
    Ok(SyntheticData {
        train,
        query: Dataset::new(Split::Query, query)?,
        gallery: Dataset::new(Split::Gallery, gallery)?,
    })
}
