//! Differentiable primitives shared by the losses: softmax, KL divergence,
//! norms, cosine similarity, plus a central-difference gradient checker.
//!
//! Everything here works on plain `f64` slices in double precision.

use crate::error::{Error, Result};

/// Norm below which a vector is treated as zero.
pub const NORM_EPS: f64 = 1e-12;

/// Step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;

/// A probability vector produced by [`softmax`].
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    /// Wraps raw probabilities, checking they are nonnegative and sum to one.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidInput("empty distribution".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInput("distribution entries must be finite and >= 0".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("distribution sums to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidInput("empty vector".into()));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("entry {i} is not finite ({})", v[i])));
    }
    Ok(())
}

fn check_same_dim(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch { expected: a.len(), got: b.len() });
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Numerically stable log-sum-exp. Returns `-inf` for an empty input.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Softmax with max subtraction. Unchecked variant for internal hot paths.
pub(crate) fn softmax_raw(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    out
}

pub fn softmax(v: &[f64]) -> Result<Distribution> {
    check_finite(v)?;
    Ok(Distribution(softmax_raw(v)))
}

/// `KL(p || q) = sum p_i ln(p_i / q_i)`, with `0 ln 0 = 0`.
pub fn kl_div(p: &Distribution, q: &Distribution) -> Result<f64> {
    check_same_dim(p.as_slice(), q.as_slice())?;
    if let Some(i) = q.as_slice().iter().position(|&x| x <= 0.0) {
        return Err(Error::InvalidInput(format!("q[{i}] must be strictly positive")));
    }
    Ok(kl_raw(p.as_slice(), q.as_slice()))
}

pub(crate) fn kl_raw(p: &[f64], q: &[f64]) -> f64 {
    let kl: f64 = p.iter().zip(q).filter(|(pi, _)| **pi > 0.0).map(|(pi, qi)| pi * (pi / qi).ln()).sum();
    // rounding can push an exact zero slightly negative
    kl.max(0.0)
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_same_dim(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    check_same_dim(a, b)?;
    let (na, nb) = (norm(a), norm(b));
    if na <= NORM_EPS || nb <= NORM_EPS {
        return Err(Error::Degenerate("cosine similarity of a zero vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n > NORM_EPS) {
        return Err(Error::Degenerate(format!("cannot normalize vector with norm {n}")));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Normalizes in place; used on bank rows that are known to be nonzero.
pub(crate) fn normalize_in_place(v: &mut [f64]) -> Result<()> {
    let n = norm(v);
    if !(n > NORM_EPS) {
        return Err(Error::Degenerate(format!("cannot normalize vector with norm {n}")));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(())
}

/// Compares an analytic gradient with central differences.
///
/// Returns `max_i |g_fd[i] - g[i]| / max(1, |g_fd[i]|)` using step [`FD_STEP`].
pub fn grad_check<F>(f: F, x: &[f64], analytic: &[f64]) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    check_same_dim(x, analytic)?;
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let plus = f(&probe);
        probe[i] = x[i] - FD_STEP;
        let minus = f(&probe);
        probe[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::InvalidInput(format!("function not finite near coordinate {i}")));
        }
        let fd = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max((fd - analytic[i]).abs() / fd.abs().max(1.0));
    }
    Ok(worst)
}
