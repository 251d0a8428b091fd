//! Part, global and cluster memory banks with momentum updates.
//!
//! Banks are plain targets: losses only read them, and they change solely
//! through the momentum rules below, which renormalize every touched row.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::clustering::PseudoLabeling;
use crate::error::{Error, Result};
use crate::numerics::{dot, norm, normalize_in_place};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentumConfig {
    /// Part bank momentum.
    pub alpha: f64,
    /// Global bank momentum.
    pub beta: f64,
    /// Cluster bank momentum.
    pub gamma: f64,
}

impl Default for MomentumConfig {
    fn default() -> Self {
        Self { alpha: 0.1, beta: 0.1, gamma: 0.1 }
    }
}

impl MomentumConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!("momentum {name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BankKind {
    Part,
    Global,
}

/// Which batch members refresh a cluster centroid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdatePolicy {
    /// Every member, sequentially in batch order.
    #[default]
    All,
    /// Only the member least similar to the centroid.
    Hard,
    /// One uniformly chosen member.
    Random,
}

/// One row per non-outlier training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceBank {
    kind: BankKind,
    rows: Array2<f64>,
    /// Dataset index of each row.
    samples: Vec<usize>,
    /// Pseudo label of each row.
    labels: Vec<usize>,
    /// Dataset index to row.
    row_of: Vec<Option<usize>>,
}

impl InstanceBank {
    pub fn kind(&self) -> BankKind {
        self.kind
    }

    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.rows.view()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        self.rows.row(r).to_slice().expect("standard layout")
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn samples(&self) -> &[usize] {
        &self.samples
    }

    pub fn row_of(&self, sample: usize) -> Result<usize> {
        self.row_of.get(sample).copied().flatten().ok_or(Error::OutOfRange { index: sample, len: self.row_of.len() })
    }
}

/// One centroid per cluster; row `k` belongs to pseudo label `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterBank {
    rows: Array2<f64>,
}

impl ClusterBank {
    pub fn from_rows(rows: Array2<f64>) -> Result<Self> {
        let mut rows = rows;
        for mut r in rows.axis_iter_mut(Axis(0)) {
            normalize_in_place(r.as_slice_mut().expect("standard layout"))?;
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.rows.view()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        self.rows.row(k).to_slice().expect("standard layout")
    }

    pub fn num_clusters(&self) -> usize {
        self.rows.nrows()
    }
}

fn instance_bank(kind: BankKind, features: ArrayView2<'_, f64>, labeling: &PseudoLabeling) -> InstanceBank {
    let samples = labeling.active();
    let mut row_of = vec![None; labeling.len()];
    for (r, &s) in samples.iter().enumerate() {
        row_of[s] = Some(r);
    }
    let rows = features.select(Axis(0), &samples).as_standard_layout().into_owned();
    let labels = samples.iter().map(|&s| labeling.label(s).expect("active sample")).collect();
    InstanceBank { kind, rows, samples, labels, row_of }
}

/// Seeds the banks for an epoch: instance banks copy the current features of
/// every non-outlier sample, centroids are normalized cluster means of the
/// global features.
pub fn init_banks(
    f_part: ArrayView2<'_, f64>,
    f_global: ArrayView2<'_, f64>,
    labeling: &PseudoLabeling,
) -> Result<(InstanceBank, InstanceBank, ClusterBank)> {
    let n = labeling.len();
    if f_part.nrows() != n || f_global.nrows() != n {
        return Err(Error::DimMismatch { expected: n, got: f_part.nrows().min(f_global.nrows()) });
    }
    if f_part.ncols() != f_global.ncols() {
        return Err(Error::DimMismatch { expected: f_global.ncols(), got: f_part.ncols() });
    }
    let mut centroids = Array2::zeros((labeling.num_clusters(), f_global.ncols()));
    for (k, mut c) in centroids.axis_iter_mut(Axis(0)).enumerate() {
        let members = labeling.members(k);
        if members.is_empty() {
            return Err(Error::Degenerate(format!("cluster {k} is empty")));
        }
        for &i in members {
            c += &f_global.row(i);
        }
        c /= members.len() as f64;
    }
    Ok((
        instance_bank(BankKind::Part, f_part, labeling),
        instance_bank(BankKind::Global, f_global, labeling),
        ClusterBank::from_rows(centroids)?,
    ))
}

/// `m * row + (1 - m) * q`, before renormalization.
pub fn momentum_blend(row: &[f64], q: &[f64], m: f64) -> Vec<f64> {
    row.iter().zip(q).map(|(r, x)| m * r + (1.0 - m) * x).collect()
}

fn apply_momentum(row: &mut [f64], q: &[f64], m: f64) -> Result<()> {
    if row.len() != q.len() {
        return Err(Error::DimMismatch { expected: row.len(), got: q.len() });
    }
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::InvalidInput(format!("momentum {m} outside [0, 1]")));
    }
    // endpoints are exact: keep the row, or take q as is
    if m == 1.0 {
        return Ok(());
    }
    if m == 0.0 {
        row.copy_from_slice(q);
        return Ok(());
    }
    let blended = momentum_blend(row, q, m);
    row.copy_from_slice(&blended);
    normalize_in_place(row)
}

/// Momentum update of the row holding dataset sample `sample`.
pub fn update_instance(bank: &mut InstanceBank, sample: usize, q: &[f64], m: f64) -> Result<()> {
    let r = bank.row_of(sample)?;
    let mut row = bank.rows.row_mut(r);
    apply_momentum(row.as_slice_mut().expect("standard layout"), q, m)
}

/// Momentum update of centroid `k` from batch members carrying label `k`.
pub fn update_cluster(
    bank: &mut ClusterBank,
    k: usize,
    members: &[ArrayView1<'_, f64>],
    gamma: f64,
    policy: UpdatePolicy,
    rng: &mut Rng,
) -> Result<()> {
    if k >= bank.num_clusters() {
        return Err(Error::OutOfRange { index: k, len: bank.num_clusters() });
    }
    if members.is_empty() {
        return Ok(());
    }
    let members: Vec<Vec<f64>> = members.iter().map(|v| v.to_vec()).collect();
    let mut row = bank.rows.row_mut(k);
    let row = row.as_slice_mut().expect("standard layout");
    match policy {
        UpdatePolicy::All => {
            for q in &members {
                apply_momentum(row, q, gamma)?;
            }
        }
        UpdatePolicy::Hard => {
            // the centroid is unit, so dividing by |q| gives the cosine similarity
            let cos = |q: &[f64]| dot(row, q) / norm(q).max(f64::MIN_POSITIVE);
            let mut hardest = 0;
            for i in 1..members.len() {
                if cos(&members[i]) < cos(&members[hardest]) {
                    hardest = i;
                }
            }
            apply_momentum(row, &members[hardest], gamma)?;
        }
        UpdatePolicy::Random => {
            let pick = rng.random_range(0..members.len());
            apply_momentum(row, &members[pick], gamma)?;
        }
    }
    Ok(())
}
