use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning rate at epoch 1 (before rescaling).
pub const LR_START: f64 = 3e-4;
/// Plateau reached after warm-up.
pub const LR_PEAK: f64 = 3e-2;
/// Rate for the final epochs.
pub const LR_TAIL: f64 = 3e-3;
const WARMUP_END: usize = 10;
const PLATEAU_END: usize = 30;
pub const MAX_EPOCH: usize = 50;

/// Warm-up schedule: linear 3e-4 → 3e-2 over epochs 1–10, flat 3e-2 through
/// epoch 30, then 3e-3 through epoch 50. The whole curve is scaled by
/// `base / 3e-2`.
pub fn lr_at(epoch: usize, base: f64) -> Result<f64> {
    if !(1..=MAX_EPOCH).contains(&epoch) {
        return Err(Error::InvalidInput(format!("epoch {epoch} outside 1..={MAX_EPOCH}")));
    }
    let raw = if epoch <= WARMUP_END {
        LR_START + (LR_PEAK - LR_START) * (epoch - 1) as f64 / (WARMUP_END - 1) as f64
    } else if epoch <= PLATEAU_END {
        LR_PEAK
    } else {
        LR_TAIL
    };
    Ok(raw * base / LR_PEAK)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled (AdamW-style) decay, applied as `p -= lr * weight_decay * p`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 5e-4 }
    }
}

/// First and second moments per parameter block plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn for_blocks(sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = sizes.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        Self { m, v, step: 0 }
    }
}

/// One Adam update over all parameter blocks. Nothing is modified when any
/// gradient entry is non-finite.
pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &[Vec<f64>],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::DimMismatch { expected: params.len(), got: grads.len() });
    }
    for (b, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[b].len() {
            return Err(Error::DimMismatch { expected: p.len(), got: g.len() });
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient { block: b });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let step = (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.eps);
            p[i] -= lr * (step + cfg.weight_decay * p[i]);
        }
    }
    Ok(())
}
