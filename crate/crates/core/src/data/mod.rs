//! Images, datasets, synthetic identity generation, masking and image IO.

mod augment;
mod io;
mod mask;
mod synthetic;

pub use augment::{augment, random_crop, CROP_PAD};
pub use io::{
    load_folder, parse_file_name, read_image, write_dataset, write_ppm, Manifest, ManifestEntry, MANIFEST_VERSION,
};
pub use mask::{
    block_side, mask_block, mask_grid, mask_grid_default, mask_grid_with_phase, mask_random, mask_random_with_fraction,
    random_side_range, MaskRegion, MaskStrategy, MaskedImage, BLOCK_FRACTION, GRID_RATIO, RANDOM_FRACTION,
};
pub use synthetic::{gen_synthetic, SyntheticData, NUM_CAMERAS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_SIDE: usize = 8;

/// Dense H×W×C image, row-major with interleaved channels, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::InvalidInput(format!("image {height}x{width} is smaller than {MIN_SIDE}x{MIN_SIDE}")));
        }
        if channels == 0 {
            return Err(Error::InvalidInput("image needs at least one channel".into()));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::DimMismatch { expected: height * width * channels, got: pixels.len() });
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidInput(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Self { height, width, channels, pixels })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn offset(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[self.offset(y, x, c)]
    }

    /// Writes a pixel, clamping to the valid range.
    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let o = self.offset(y, x, c);
        self.pixels[o] = v.clamp(0.0, 1.0);
    }

    /// Zeroes a rectangle. The caller guarantees it lies inside the image.
    pub(crate) fn zero_rect(&mut self, r: &MaskRegion) {
        for y in r.top..r.top + r.height {
            let start = self.offset(y, r.left, 0);
            let end = self.offset(y, r.left + r.width - 1, self.channels - 1) + 1;
            self.pixels[start..end].iter_mut().for_each(|p| *p = 0.0);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    /// Ground truth, consulted only by evaluation and the generator.
    pub identity: usize,
    pub camera: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(split: Split, samples: Vec<Sample>) -> Result<Self> {
        let first =
            samples.first().ok_or_else(|| Error::InvalidInput("dataset must contain at least one sample".into()))?;
        let shape = first.image.shape();
        if let Some(bad) = samples.iter().position(|s| s.image.shape() != shape) {
            return Err(Error::InvalidInput(format!(
                "sample {bad} has shape {:?}, expected {shape:?}",
                samples[bad].image.shape()
            )));
        }
        Ok(Self { split, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        self.samples[0].image.shape()
    }

    pub fn images(&self) -> Vec<&Image> {
        self.samples.iter().map(|s| &s.image).collect()
    }

    pub fn num_identities(&self) -> usize {
        let mut ids: Vec<usize> = self.samples.iter().map(|s| s.identity).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}
