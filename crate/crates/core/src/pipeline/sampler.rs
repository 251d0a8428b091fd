use rand::seq::index;
use rand::Rng as _;

use crate::clustering::PseudoLabeling;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Draws `p` distinct clusters uniformly and `k` members from each, with
/// replacement only when a cluster has fewer than `k` members.
///
/// Indices come back grouped by cluster in draw order.
pub fn pk_sample(labeling: &PseudoLabeling, p: usize, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let clusters = labeling.num_clusters();
    if p == 0 || k == 0 {
        return Err(Error::InvalidInput("batch needs p >= 1 and k >= 1".into()));
    }
    if clusters < p {
        return Err(Error::InvalidInput(format!("need {p} clusters for a batch, found {clusters}")));
    }
    let mut batch = Vec::with_capacity(p * k);
    for c in index::sample(rng, clusters, p) {
        let members = labeling.members(c);
        if members.len() >= k {
            batch.extend(index::sample(rng, members.len(), k).into_iter().map(|i| members[i]));
        } else {
            batch.extend((0..k).map(|_| members[rng.random_range(0..members.len())]));
        }
    }
    Ok(batch)
}
