use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::FeatureEncoder;
use crate::data::Image;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Output norms below this are floored before dividing, so a zero output maps
/// to a zero feature instead of an error.
pub const FEATURE_NORM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    /// Linear hidden layer; used to check the backward pass in closed form.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub hidden: usize,
    pub dim: usize,
    pub activation: Activation,
    /// Pixels are standardized as `(p - input_mean) / input_std` on entry.
    pub input_mean: f64,
    pub input_std: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            channels: 3,
            hidden: 128,
            dim: 64,
            activation: Activation::Relu,
            input_mean: 0.5,
            input_std: 0.25,
        }
    }
}

impl EncoderConfig {
    pub fn input_len(&self) -> usize {
        self.height * self.width * self.channels
    }
}

/// Two-layer perceptron over flattened pixels: `normalize(W2 relu(W1 x + b1) + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpEncoder {
    config: EncoderConfig,
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
    /// Bumped on every mutable parameter access; caches remember it.
    version: u64,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    version: u64,
    input: Array2<f64>,
    pre: Array2<f64>,
    hidden: Array2<f64>,
    features: Array2<f64>,
    norms: Vec<f64>,
}

impl MlpCache {
    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }
}

impl MlpEncoder {
    /// Uniform init scaled by fan-in; biases start at zero.
    pub fn new(config: EncoderConfig, rng: &mut Rng) -> Result<Self> {
        if config.input_len() == 0 || config.hidden == 0 || config.dim == 0 {
            return Err(Error::InvalidInput("encoder dimensions must be positive".into()));
        }
        if !(config.input_std > 0.0) {
            return Err(Error::InvalidInput("input_std must be positive".into()));
        }
        let p = config.input_len();
        let bound1 = (6.0 / p as f64).sqrt();
        let bound2 = (3.0 / config.hidden as f64).sqrt();
        let w1 = Array2::from_shape_simple_fn((config.hidden, p), || rng.random_range(-bound1..bound1));
        let w2 = Array2::from_shape_simple_fn((config.dim, config.hidden), || rng.random_range(-bound2..bound2));
        Ok(Self { b1: Array1::zeros(config.hidden), b2: Array1::zeros(config.dim), w1, w2, config, version: 0 })
    }

    pub fn zeros(config: EncoderConfig) -> Self {
        let p = config.input_len();
        Self {
            w1: Array2::zeros((config.hidden, p)),
            b1: Array1::zeros(config.hidden),
            w2: Array2::zeros((config.dim, config.hidden)),
            b2: Array1::zeros(config.dim),
            config,
            version: 0,
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn input_matrix(&self, images: &[&Image]) -> Result<Array2<f64>> {
        let shape = self.input_shape();
        let p = self.config.input_len();
        let (mean, std) = (self.config.input_mean, self.config.input_std);
        let mut x = Array2::zeros((images.len(), p));
        for (mut row, img) in x.axis_iter_mut(Axis(0)).zip(images) {
            if img.shape() != shape {
                return Err(Error::InvalidInput(format!(
                    "image shape {:?} does not match encoder input {shape:?}",
                    img.shape()
                )));
            }
            row.iter_mut().zip(img.pixels()).for_each(|(r, p)| *r = (p - mean) / std);
        }
        Ok(x)
    }
}

impl FeatureEncoder for MlpEncoder {
    type Cache = MlpCache;

    fn input_shape(&self) -> (usize, usize, usize) {
        (self.config.height, self.config.width, self.config.channels)
    }

    fn feature_dim(&self) -> usize {
        self.config.dim
    }

    fn encode(&self, images: &[&Image]) -> Result<(Array2<f64>, MlpCache)> {
        let input = self.input_matrix(images)?;
        let pre = input.dot(&self.w1.t()) + &self.b1;
        let hidden = match self.config.activation {
            Activation::Relu => pre.mapv(|v| v.max(0.0)),
            Activation::Identity => pre.clone(),
        };
        let mut features = hidden.dot(&self.w2.t()) + &self.b2;
        let mut norms = Vec::with_capacity(images.len());
        for mut row in features.axis_iter_mut(Axis(0)) {
            let n = row.dot(&row).sqrt();
            norms.push(n);
            row /= n.max(FEATURE_NORM_FLOOR);
        }
        let cache = MlpCache { version: self.version, input, pre, hidden, features: features.clone(), norms };
        Ok((features, cache))
    }

    fn backward(&self, cache: &MlpCache, grad: ArrayView2<'_, f64>) -> Result<Vec<Vec<f64>>> {
        if cache.version != self.version {
            return Err(Error::InvalidInput("stale cache: parameters changed since forward".into()));
        }
        if grad.dim() != cache.features.dim() {
            return Err(Error::DimMismatch { expected: cache.features.len(), got: grad.len() });
        }
        // through the normalization: (g - f (f.g)) / |z|
        let mut g_out = grad.to_owned();
        for ((mut g, f), &n) in g_out.axis_iter_mut(Axis(0)).zip(cache.features.axis_iter(Axis(0))).zip(&cache.norms) {
            if n > FEATURE_NORM_FLOOR {
                let proj = g.dot(&f);
                g.zip_mut_with(&f, |gi, fi| *gi = (*gi - fi * proj) / n);
            } else {
                g /= FEATURE_NORM_FLOOR;
            }
        }
        let g_w2 = g_out.t().dot(&cache.hidden);
        let g_b2 = g_out.sum_axis(Axis(0));
        let mut g_hidden = g_out.dot(&self.w2);
        if self.config.activation == Activation::Relu {
            g_hidden.zip_mut_with(&cache.pre, |g, p| {
                if *p <= 0.0 {
                    *g = 0.0;
                }
            });
        }
        let g_w1 = g_hidden.t().dot(&cache.input);
        let g_b1 = g_hidden.sum_axis(Axis(0));
        let flat = |a: Array2<f64>| a.as_standard_layout().iter().copied().collect::<Vec<_>>();
        Ok(vec![flat(g_w1), g_b1.to_vec(), flat(g_w2), g_b2.to_vec()])
    }

    fn param_blocks(&self) -> Vec<&[f64]> {
        vec![
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.version += 1;
        vec![
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }
}
