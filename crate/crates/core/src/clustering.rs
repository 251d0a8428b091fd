//! DBSCAN pseudo-labelling over cosine distances of global features.

use std::collections::VecDeque;
use std::io::Write;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DbscanConfig {
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for DbscanConfig {
    fn default() -> Self {
        Self { eps: 0.16, min_pts: 4 }
    }
}

/// Cluster assignment for every sample; `None` marks an outlier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoLabeling {
    labels: Vec<Option<usize>>,
    members: Vec<Vec<usize>>,
}

impl PseudoLabeling {
    /// Builds a labeling from raw labels, renumbering clusters densely in
    /// order of first appearance.
    pub fn from_labels(raw: &[Option<usize>]) -> Self {
        let mut remap = std::collections::HashMap::new();
        let mut members: Vec<Vec<usize>> = Vec::new();
        let labels = raw
            .iter()
            .enumerate()
            .map(|(i, l)| {
                l.map(|l| {
                    let k = *remap.entry(l).or_insert_with(|| {
                        members.push(Vec::new());
                        members.len() - 1
                    });
                    members[k].push(i);
                    k
                })
            })
            .collect();
        Self { labels, members }
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels[i]
    }

    pub fn num_clusters(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self, k: usize) -> &[usize] {
        &self.members[k]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_outliers(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    /// Indices of non-outlier samples in ascending order.
    pub fn active(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i].is_some()).collect()
    }

    /// Labels renamed so clusters are numbered by their smallest member.
    pub fn canonical(&self) -> Vec<Option<usize>> {
        Self::from_labels(&self.labels).labels
    }

    /// Writes `sample_index,pseudo_label` rows, `-1` for outliers.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "sample_index,pseudo_label")?;
        for (i, l) in self.labels.iter().enumerate() {
            match l {
                Some(k) => writeln!(out, "{i},{k}")?,
                None => writeln!(out, "{i},-1")?,
            }
        }
        Ok(())
    }
}

/// Cosine distance `1 - a.b` between unit rows; exactly symmetric with a zero diagonal.
pub fn pairwise_distance(features: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = features.nrows();
    let gram = features.dot(&features.t());
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v = 1.0 - gram[[i, j]];
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    d
}

/// DBSCAN over a precomputed distance matrix.
///
/// A point is core when at least `min_pts` points (itself included) lie within
/// `eps`. Clusters grow from core points scanned in index order; a border
/// point joins whichever cluster reaches it first.
pub fn dbscan(dist: ArrayView2<'_, f64>, eps: f64, min_pts: usize) -> Result<PseudoLabeling> {
    let n = dist.nrows();
    if n == 0 {
        return Err(Error::InvalidInput("dbscan on empty input".into()));
    }
    if dist.ncols() != n {
        return Err(Error::DimMismatch { expected: n, got: dist.ncols() });
    }
    if !(eps > 0.0) || min_pts == 0 {
        return Err(Error::InvalidInput(format!("need eps > 0 and min_pts >= 1, got {eps}, {min_pts}")));
    }
    let neighbors: Vec<Vec<usize>> =
        (0..n).map(|i| (0..n).filter(|&j| i == j || dist[[i, j]] <= eps).collect()).collect();
    let core: Vec<bool> = neighbors.iter().map(|nb| nb.len() >= min_pts).collect();

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut k = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if !core[start] || labels[start].is_some() {
            continue;
        }
        labels[start] = Some(k);
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for &q in &neighbors[p] {
                if labels[q].is_none() {
                    labels[q] = Some(k);
                    if core[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
        k += 1;
    }
    Ok(PseudoLabeling::from_labels(&labels))
}

/// Clusters the current global features; fails when every sample is an outlier.
pub fn relabel_epoch(features: ArrayView2<'_, f64>, cfg: &DbscanConfig) -> Result<PseudoLabeling> {
    let labeling = dbscan(pairwise_distance(features).view(), cfg.eps, cfg.min_pts)?;
    if labeling.num_clusters() == 0 {
        return Err(Error::NoClusters { outliers: labeling.len(), total: labeling.len() });
    }
    Ok(labeling)
}
