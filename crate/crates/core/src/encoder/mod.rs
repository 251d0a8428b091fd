//! Feature encoders.
//!
//! [`FeatureEncoder`] is the seam the training loop works against: batched
//! forward with a cache, exact backward to parameter gradients, and access to
//! the parameters as flat blocks so the optimizer and checkpoints need no
//! knowledge of the architecture. [`MlpEncoder`] is the provided toy model.

mod mlp;
mod optim;

pub use mlp::{Activation, EncoderConfig, MlpCache, MlpEncoder, FEATURE_NORM_FLOOR};
pub use optim::{adam_step, lr_at, AdamConfig, AdamState, LR_PEAK, LR_START, LR_TAIL, MAX_EPOCH};

use ndarray::{Array2, ArrayView2};

use crate::data::Image;
use crate::error::Result;

pub trait FeatureEncoder {
    type Cache;

    /// `(height, width, channels)` of accepted images.
    fn input_shape(&self) -> (usize, usize, usize);

    fn feature_dim(&self) -> usize;

    /// Encodes a batch into one L2-normalized feature row per image.
    fn encode(&self, images: &[&Image]) -> Result<(Array2<f64>, Self::Cache)>;

    /// Gradient of `sum(grad ⊙ features)` with respect to every parameter
    /// block, in the order of [`FeatureEncoder::param_blocks`].
    fn backward(&self, cache: &Self::Cache, grad: ArrayView2<'_, f64>) -> Result<Vec<Vec<f64>>>;

    fn param_blocks(&self) -> Vec<&[f64]>;

    fn param_blocks_mut(&mut self) -> Vec<&mut [f64]>;

    /// Forward without keeping the cache.
    fn features(&self, images: &[&Image]) -> Result<Array2<f64>> {
        self.encode(images).map(|(f, _)| f)
    }
}
