//! Contrastive objectives and their analytic gradients with respect to the
//! query features.
//!
//! * proxy loss: KL(softmax(c) ‖ softmax(q)) + ‖q − c‖ against the query's
//!   cluster centroid, for the global and the masked query;
//! * hybrid loss: instance-level InfoNCE with every same-cluster bank row as
//!   a positive and every other row as a negative;
//! * weighted cluster loss: cross-entropy over centroid similarities scaled
//!   by the query's mean cosine similarity to its same-label batch mates.
//!
//! Bank rows and centroids are constants here; no gradient reaches them.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{ClusterBank, InstanceBank};
use crate::numerics::{cosine_sim, dot, kl_raw, l2_distance, log_sum_exp, softmax_raw};

/// Distances below this get a zero subgradient.
const DIST_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub tau: f64,
    /// Weight of the proxy (part + global) terms.
    pub lambda: f64,
    /// Weight of the hybrid (part + global) terms.
    pub eta: f64,
    pub enable_pcl: bool,
    pub enable_hcl: bool,
    pub enable_wrccl: bool,
    /// Unweighted cluster contrast.
    pub baseline_ccl: bool,
    /// Identity cross-entropy over a classifier head.
    pub baseline_id: bool,
    /// Batch-hard triplet loss.
    pub baseline_triplet: bool,
    pub triplet_margin: f64,
    /// Drop the masked branch's proxy-loss gradient.
    pub stop_gradient: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.05,
            lambda: 0.5,
            eta: 1.0,
            enable_pcl: true,
            enable_hcl: true,
            enable_wrccl: true,
            baseline_ccl: false,
            baseline_id: false,
            baseline_triplet: false,
            triplet_margin: 0.3,
            stop_gradient: false,
        }
    }
}

impl LossConfig {
    /// Everything off; combine with the `with_*` toggles.
    pub fn none() -> Self {
        Self { enable_pcl: false, enable_hcl: false, enable_wrccl: false, ..Self::default() }
    }

    pub fn any_enabled(&self) -> bool {
        self.enable_pcl
            || self.enable_hcl
            || self.enable_wrccl
            || self.baseline_ccl
            || self.baseline_id
            || self.baseline_triplet
    }

    /// Whether the masked stream receives any gradient.
    pub fn uses_part_branch(&self) -> bool {
        self.enable_hcl || (self.enable_pcl && !self.stop_gradient)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::InvalidInput(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.triplet_margin >= 0.0) {
            return Err(Error::InvalidInput("triplet margin must be nonnegative".into()));
        }
        Ok(())
    }
}

/// A scalar loss and its gradient with respect to one query.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub loss: f64,
    pub grad: Vec<f64>,
}

impl Term {
    fn zero(dim: usize) -> Self {
        Self { loss: 0.0, grad: vec![0.0; dim] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contrast {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Set when there were no negatives and the loss was defined as zero.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PclTerms {
    pub global: Term,
    pub part: Term,
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch { expected: a.len(), got: b.len() });
    }
    Ok(())
}

fn check_nonzero(q: &[f64]) -> Result<()> {
    if crate::numerics::norm(q) <= DIST_EPS {
        return Err(Error::Degenerate("zero-norm query".into()));
    }
    Ok(())
}

/// One branch of the proxy loss: `KL(softmax(c) ‖ softmax(q)) + ‖q − c‖`.
pub fn proxy_term(q: &[f64], centroid: &[f64]) -> Result<Term> {
    check_dims(centroid, q)?;
    check_nonzero(q)?;
    let target = softmax_raw(centroid);
    let pred = softmax_raw(q);
    let dist = l2_distance(q, centroid)?;
    let loss = kl_raw(&target, &pred) + dist;
    let grad = (0..q.len())
        .map(|i| {
            let pull = if dist > DIST_EPS { (q[i] - centroid[i]) / dist } else { 0.0 };
            pred[i] - target[i] + pull
        })
        .collect();
    Ok(Term { loss, grad })
}

/// Proxy loss for a global query and its masked counterpart against the
/// shared centroid.
pub fn pcl(q: &[f64], q_masked: &[f64], centroid: &[f64]) -> Result<PclTerms> {
    Ok(PclTerms { global: proxy_term(q, centroid)?, part: proxy_term(q_masked, centroid)? })
}

/// Hybrid contrast over explicit rows and their labels.
pub fn hybrid_contrast(
    q: &[f64],
    rows: ArrayView2<'_, f64>,
    labels: &[usize],
    y_k: usize,
    tau: f64,
) -> Result<Contrast> {
    if rows.nrows() != labels.len() {
        return Err(Error::DimMismatch { expected: rows.nrows(), got: labels.len() });
    }
    if rows.ncols() != q.len() {
        return Err(Error::DimMismatch { expected: rows.ncols(), got: q.len() });
    }
    let logits: Vec<f64> = rows.outer_iter().map(|r| dot(q, r.as_slice().expect("standard layout")) / tau).collect();
    let pos: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == y_k).collect();
    if pos.is_empty() {
        return Err(Error::InvalidInput(format!("no bank rows carry label {y_k}")));
    }
    if pos.len() == labels.len() {
        return Ok(Contrast { loss: 0.0, grad: vec![0.0; q.len()], degenerate: true });
    }
    let pos_logits: Vec<f64> = pos.iter().map(|&j| logits[j]).collect();
    let loss = (log_sum_exp(&logits) - log_sum_exp(&pos_logits)).max(0.0);
    let all_w = softmax_raw(&logits);
    let pos_w = softmax_raw(&pos_logits);
    let mut grad = vec![0.0; q.len()];
    for (j, r) in rows.outer_iter().enumerate() {
        for (g, m) in grad.iter_mut().zip(r) {
            *g += all_w[j] * m;
        }
    }
    for (&j, w) in pos.iter().zip(&pos_w) {
        for (g, m) in grad.iter_mut().zip(rows.row(j)) {
            *g -= w * m;
        }
    }
    grad.iter_mut().for_each(|g| *g /= tau);
    Ok(Contrast { loss, grad, degenerate: false })
}

/// Hybrid contrast of `q` against an instance bank.
pub fn hcl(q: &[f64], bank: &InstanceBank, y_k: usize, tau: f64) -> Result<Contrast> {
    hybrid_contrast(q, bank.rows(), bank.labels(), y_k, tau)
}

/// Mean cosine similarity of `q` to its same-label batch features (which
/// include `q` itself). May be negative; the weighted loss clamps it.
pub fn wrccl_weight(q: &[f64], same_label: &[&[f64]]) -> Result<f64> {
    if same_label.is_empty() {
        return Err(Error::InvalidInput("weight needs at least the query itself".into()));
    }
    let mut sum = 0.0;
    for f in same_label {
        sum += cosine_sim(q, f)?;
    }
    Ok(sum / same_label.len() as f64)
}

/// `-w log softmax(q·C/τ)[y_k]` over explicit centroid rows; `w` is clamped
/// at zero and treated as a constant.
pub fn weighted_cluster_contrast(
    q: &[f64],
    centroids: ArrayView2<'_, f64>,
    y_k: usize,
    w: f64,
    tau: f64,
) -> Result<Term> {
    if y_k >= centroids.nrows() {
        return Err(Error::OutOfRange { index: y_k, len: centroids.nrows() });
    }
    if centroids.ncols() != q.len() {
        return Err(Error::DimMismatch { expected: centroids.ncols(), got: q.len() });
    }
    let w = w.max(0.0);
    if w == 0.0 {
        return Ok(Term::zero(q.len()));
    }
    let logits: Vec<f64> =
        centroids.outer_iter().map(|c| dot(q, c.as_slice().expect("standard layout")) / tau).collect();
    let loss = w * (log_sum_exp(&logits) - logits[y_k]).max(0.0);
    let probs = softmax_raw(&logits);
    let mut grad = vec![0.0; q.len()];
    for (k, c) in centroids.outer_iter().enumerate() {
        let coef = probs[k] - if k == y_k { 1.0 } else { 0.0 };
        for (g, v) in grad.iter_mut().zip(c) {
            *g += coef * v;
        }
    }
    grad.iter_mut().for_each(|g| *g *= w / tau);
    Ok(Term { loss, grad })
}

pub fn wrccl(q: &[f64], bank: &ClusterBank, y_k: usize, w: f64, tau: f64) -> Result<Term> {
    weighted_cluster_contrast(q, bank.rows(), y_k, w, tau)
}

/// Plain cluster contrast: the weighted loss with `w = 1`.
pub fn baseline_ccl(q: &[f64], bank: &ClusterBank, y_k: usize, tau: f64) -> Result<Term> {
    weighted_cluster_contrast(q, bank.rows(), y_k, 1.0, tau)
}

/// Identity cross-entropy over a linear head `logits = W q`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdTerm {
    pub loss: f64,
    pub grad_q: Vec<f64>,
    /// Gradient for the head, same shape as `W`.
    pub grad_head: Array2<f64>,
}

pub fn id_loss(q: &[f64], head: ArrayView2<'_, f64>, y_k: usize) -> Result<IdTerm> {
    if y_k >= head.nrows() {
        return Err(Error::OutOfRange { index: y_k, len: head.nrows() });
    }
    if head.ncols() != q.len() {
        return Err(Error::DimMismatch { expected: head.ncols(), got: q.len() });
    }
    let logits: Vec<f64> = head.outer_iter().map(|w| w.iter().zip(q).map(|(a, b)| a * b).sum()).collect();
    let loss = (log_sum_exp(&logits) - logits[y_k]).max(0.0);
    let mut coef = softmax_raw(&logits);
    coef[y_k] -= 1.0;
    let mut grad_q = vec![0.0; q.len()];
    let mut grad_head = Array2::zeros(head.dim());
    for (k, w) in head.outer_iter().enumerate() {
        for (i, v) in w.iter().enumerate() {
            grad_q[i] += coef[k] * v;
            grad_head[[k, i]] = coef[k] * q[i];
        }
    }
    Ok(IdTerm { loss, grad_q, grad_head })
}

/// Batch-hard triplet loss for one anchor row of `feats`.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletTerm {
    pub loss: f64,
    /// Gradient for every row of the batch (anchor, hardest positive and
    /// hardest negative are the only nonzero rows).
    pub grad: Array2<f64>,
    pub positive: usize,
    pub negative: usize,
}

pub fn batch_hard_triplet(
    anchor: usize,
    feats: ArrayView2<'_, f64>,
    labels: &[usize],
    margin: f64,
) -> Result<TripletTerm> {
    if feats.nrows() != labels.len() {
        return Err(Error::DimMismatch { expected: feats.nrows(), got: labels.len() });
    }
    if anchor >= labels.len() {
        return Err(Error::OutOfRange { index: anchor, len: labels.len() });
    }
    let a = feats.row(anchor).to_vec();
    let dist = |j: usize| l2_distance(&a, feats.row(j).as_slice().expect("standard layout"));
    let mut pos: Option<(usize, f64)> = None;
    let mut neg: Option<(usize, f64)> = None;
    for j in 0..labels.len() {
        if j == anchor {
            continue;
        }
        let d = dist(j)?;
        if labels[j] == labels[anchor] {
            if pos.is_none_or(|(_, best)| d > best) {
                pos = Some((j, d));
            }
        } else if neg.is_none_or(|(_, best)| d < best) {
            neg = Some((j, d));
        }
    }
    let (p, d_ap) = pos.ok_or_else(|| Error::InvalidInput(format!("anchor {anchor} has no positive in the batch")))?;
    let (n, d_an) = neg.ok_or_else(|| Error::InvalidInput(format!("anchor {anchor} has no negative in the batch")))?;
    let mut grad = Array2::zeros(feats.dim());
    let loss = (d_ap - d_an + margin).max(0.0);
    if loss > 0.0 {
        for i in 0..a.len() {
            let u_ap = if d_ap > DIST_EPS { (a[i] - feats[[p, i]]) / d_ap } else { 0.0 };
            let u_an = if d_an > DIST_EPS { (a[i] - feats[[n, i]]) / d_an } else { 0.0 };
            grad[[anchor, i]] += u_ap - u_an;
            grad[[p, i]] -= u_ap;
            grad[[n, i]] += u_an;
        }
    }
    Ok(TripletTerm { loss, grad, positive: p, negative: n })
}

/// Identity and triplet baselines for one anchor of the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct IdTripletTerms {
    pub id: IdTerm,
    pub triplet: TripletTerm,
}

pub fn baseline_id_triplet(
    anchor: usize,
    feats: ArrayView2<'_, f64>,
    labels: &[usize],
    head: ArrayView2<'_, f64>,
    margin: f64,
) -> Result<IdTripletTerms> {
    let q = feats.row(anchor).to_vec();
    Ok(IdTripletTerms {
        id: id_loss(&q, head, labels.get(anchor).copied().unwrap_or(usize::MAX))?,
        triplet: batch_hard_triplet(anchor, feats, labels, margin)?,
    })
}

/// Per-query component losses; `None` for terms that were not evaluated.
#[derive(Debug, Clone, Default)]
pub struct LossParts {
    pub pcl: Option<PclTerms>,
    pub hcl_g: Option<Contrast>,
    pub hcl_p: Option<Contrast>,
    pub wrccl: Option<Term>,
    pub ccl: Option<Term>,
    pub id: Option<Term>,
    /// Triplet gradients span the whole batch and are applied by the caller;
    /// only the value is folded in here.
    pub triplet: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossBundle {
    pub pcl_g: f64,
    pub pcl_p: f64,
    pub hcl_g: f64,
    pub hcl_p: f64,
    pub wrccl: f64,
    pub ccl: f64,
    pub id: f64,
    pub triplet: f64,
    pub total: f64,
    pub grad_q: Vec<f64>,
    pub grad_q_masked: Vec<f64>,
}

impl LossBundle {
    pub fn is_finite(&self) -> bool {
        [self.pcl_g, self.pcl_p, self.hcl_g, self.hcl_p, self.wrccl, self.ccl, self.id, self.triplet, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn describe(&self) -> String {
        format!(
            "pcl_g={} pcl_p={} hcl_g={} hcl_p={} wrccl={} ccl={} id={} triplet={} total={}",
            self.pcl_g, self.pcl_p, self.hcl_g, self.hcl_p, self.wrccl, self.ccl, self.id, self.triplet, self.total
        )
    }
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(y, v)| *y += a * v);
}

/// Weighted combination:
/// `λ(pcl_p + pcl_g) + η(hcl_p + hcl_g) + wrccl + ccl + id + triplet`,
/// where disabled terms contribute nothing.
pub fn total(parts: &LossParts, cfg: &LossConfig, dim: usize) -> LossBundle {
    let mut b = LossBundle { grad_q: vec![0.0; dim], grad_q_masked: vec![0.0; dim], ..Default::default() };
    if let (true, Some(p)) = (cfg.enable_pcl, &parts.pcl) {
        b.pcl_g = p.global.loss;
        b.pcl_p = p.part.loss;
        b.total += cfg.lambda * (p.part.loss + p.global.loss);
        axpy(&mut b.grad_q, cfg.lambda, &p.global.grad);
        if !cfg.stop_gradient {
            axpy(&mut b.grad_q_masked, cfg.lambda, &p.part.grad);
        }
    }
    if cfg.enable_hcl {
        if let Some(h) = &parts.hcl_g {
            b.hcl_g = h.loss;
            b.total += cfg.eta * h.loss;
            axpy(&mut b.grad_q, cfg.eta, &h.grad);
        }
        if let Some(h) = &parts.hcl_p {
            b.hcl_p = h.loss;
            b.total += cfg.eta * h.loss;
            axpy(&mut b.grad_q_masked, cfg.eta, &h.grad);
        }
    }
    let single = |on: bool, t: &Option<Term>, value: &mut f64, b_total: &mut f64, grad: &mut [f64]| {
        if let (true, Some(t)) = (on, t) {
            *value = t.loss;
            *b_total += t.loss;
            axpy(grad, 1.0, &t.grad);
        }
    };
    single(cfg.enable_wrccl, &parts.wrccl, &mut b.wrccl, &mut b.total, &mut b.grad_q);
    single(cfg.baseline_ccl, &parts.ccl, &mut b.ccl, &mut b.total, &mut b.grad_q);
    single(cfg.baseline_id, &parts.id, &mut b.id, &mut b.total, &mut b.grad_q);
    if let (true, Some(t)) = (cfg.baseline_triplet, parts.triplet) {
        b.triplet = t;
        b.total += t;
    }
    b
}
