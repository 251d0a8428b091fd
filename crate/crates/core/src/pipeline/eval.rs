use std::io::Write;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::encoder::FeatureEncoder;
use crate::error::{Error, Result};
use crate::numerics::cosine_sim;

/// Ranks reported in CMC curves by default.
pub const DEFAULT_MAX_RANK: usize = 25;

/// Ground truth for one image: `(identity, camera)`.
pub type Meta = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    /// `cmc[r - 1]` is the fraction of queries with a true match in the top `r`.
    pub cmc: Vec<f64>,
    /// AP of every scored query, in query order.
    pub per_query_ap: Vec<f64>,
    /// Queries with no true match left in the gallery.
    pub skipped_queries: Vec<usize>,
}

impl EvalReport {
    pub fn rank(&self, r: usize) -> f64 {
        self.cmc.get(r.saturating_sub(1)).or(self.cmc.last()).copied().unwrap_or(0.0)
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn write_cmc_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "rank,accuracy")?;
        for (r, acc) in self.cmc.iter().enumerate() {
            writeln!(out, "{},{}", r + 1, acc)?;
        }
        Ok(())
    }
}

/// Scores a query set against a gallery by cosine similarity.
///
/// Gallery entries sharing both identity and camera with the query are
/// dropped before ranking. Equal similarities rank by gallery index.
pub fn score(
    query: ArrayView2<'_, f64>,
    query_meta: &[Meta],
    gallery: ArrayView2<'_, f64>,
    gallery_meta: &[Meta],
    max_rank: usize,
) -> Result<EvalReport> {
    if query.nrows() != query_meta.len() || gallery.nrows() != gallery_meta.len() {
        return Err(Error::InvalidInput("features and metadata disagree in length".into()));
    }
    if query.ncols() != gallery.ncols() {
        return Err(Error::DimMismatch { expected: gallery.ncols(), got: query.ncols() });
    }
    if max_rank == 0 {
        return Err(Error::InvalidInput("max_rank must be at least 1".into()));
    }
    let mut hits = vec![0usize; max_rank];
    let mut per_query_ap = Vec::new();
    let mut skipped_queries = Vec::new();
    for (qi, q) in query.outer_iter().enumerate() {
        let q = q.to_vec();
        let (id, cam) = query_meta[qi];
        let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(gallery.nrows());
        for (gi, g) in gallery.outer_iter().enumerate() {
            if gallery_meta[gi] == (id, cam) {
                continue;
            }
            ranked.push((cosine_sim(&q, &g.to_vec())?, gi));
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let positive_ranks: Vec<usize> =
            ranked.iter().enumerate().filter(|(_, (_, gi))| gallery_meta[*gi].0 == id).map(|(r, _)| r + 1).collect();
        let Some(&first) = positive_ranks.first() else {
            log::warn!("query {qi} (identity {id}) has no match in the gallery; skipped");
            skipped_queries.push(qi);
            continue;
        };
        let ap = positive_ranks.iter().enumerate().map(|(i, &r)| (i + 1) as f64 / r as f64).sum::<f64>()
            / positive_ranks.len() as f64;
        per_query_ap.push(ap);
        for h in hits.iter_mut().skip(first - 1) {
            *h += 1;
        }
    }
    if per_query_ap.is_empty() {
        return Err(Error::InvalidInput("no query has a match in the gallery".into()));
    }
    let n = per_query_ap.len() as f64;
    Ok(EvalReport {
        map: per_query_ap.iter().sum::<f64>() / n,
        cmc: hits.iter().map(|&h| h as f64 / n).collect(),
        per_query_ap,
        skipped_queries,
    })
}

fn meta(ds: &Dataset) -> Vec<Meta> {
    ds.samples.iter().map(|s| (s.identity, s.camera)).collect()
}

/// Encodes both splits with the unmasked global stream and scores them.
pub fn evaluate<E: FeatureEncoder>(
    encoder: &E,
    query: &Dataset,
    gallery: &Dataset,
    max_rank: usize,
) -> Result<EvalReport> {
    let fq = encoder.features(&query.images())?;
    let fg = encoder.features(&gallery.images())?;
    score(fq.view(), &meta(query), fg.view(), &meta(gallery), max_rank)
}
