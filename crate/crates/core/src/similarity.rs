//! Exact nearest-neighbour queries over region embeddings.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::autoencoder::Embedding;
use crate::cluster::{euclidean_distance, ClusterCut};
use crate::region::RegionKey;

#[derive(Debug, Error, PartialEq)]
pub enum SimilarityError {
    #[error("region {0} is not in the index")]
    UnknownRegion(String),
    #[error("no candidate regions left after filtering")]
    EmptyCandidateSet,
    #[error("cluster {0} has no members")]
    UnknownCluster(usize),
    #[error("duplicate region {0} in index")]
    DuplicateRegion(String),
    #[error("embeddings must share one dimension")]
    DimensionMismatch,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("cut covers {cut} regions but the index has {index}")]
    CutMismatch { cut: usize, index: usize },
}

/// Immutable index of embeddings, optionally tagged with typology labels.
#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    entries: Vec<Embedding>,
    labels: Option<Vec<String>>,
    position: HashMap<RegionKey, usize>,
}

impl EmbeddingIndex {
    pub fn new(entries: Vec<Embedding>) -> Result<Self, SimilarityError> {
        let mut position = HashMap::with_capacity(entries.len());
        let dim = entries.first().map(|e| e.vector.len());
        for (i, e) in entries.iter().enumerate() {
            if Some(e.vector.len()) != dim {
                return Err(SimilarityError::DimensionMismatch);
            }
            if position.insert(e.region.clone(), i).is_some() {
                return Err(SimilarityError::DuplicateRegion(e.region.to_string()));
            }
        }
        Ok(EmbeddingIndex {
            entries,
            labels: None,
            position,
        })
    }

    /// Attach one label per entry (e.g. typology names).
    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self, SimilarityError> {
        if labels.len() != self.entries.len() {
            return Err(SimilarityError::CutMismatch {
                cut: labels.len(),
                index: self.entries.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn entries(&self) -> &[Embedding] {
        &self.entries
    }

    pub fn label(&self, i: usize) -> Option<&str> {
        self.labels.as_ref().map(|l| l[i].as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, key: &RegionKey) -> Option<usize> {
        self.position.get(key).copied()
    }
}

#[derive(Debug, Clone, Default)]
pub struct QueryFilter {
    /// Only return regions from these cities.
    pub cities: Option<BTreeSet<String>>,
    /// Drop regions from the query's own city.
    pub exclude_same_city: bool,
}

fn rank(a: &(f64, &RegionKey), b: &(f64, &RegionKey)) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1))
}

/// The `k` regions closest to `query`, ascending by distance and then by
/// (city_id, cell). The query itself is never returned.
pub fn nearest(
    index: &EmbeddingIndex,
    query: &RegionKey,
    k: usize,
    filter: &QueryFilter,
) -> Result<Vec<(RegionKey, f64)>, SimilarityError> {
    if k == 0 {
        return Err(SimilarityError::ZeroK);
    }
    let qi = index
        .position(query)
        .ok_or_else(|| SimilarityError::UnknownRegion(query.to_string()))?;
    let q = &index.entries[qi].vector;
    let mut scored: Vec<(f64, &RegionKey)> = index
        .entries
        .iter()
        .enumerate()
        .filter(|(i, e)| {
            *i != qi
                && filter.cities.as_ref().is_none_or(|c| c.contains(&e.region.city_id))
                && !(filter.exclude_same_city && e.region.city_id == query.city_id)
        })
        .map(|(_, e)| (euclidean_distance(q, &e.vector).expect("uniform dimension"), &e.region))
        .collect();
    if scored.is_empty() {
        return Err(SimilarityError::EmptyCandidateSet);
    }
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, rank);
        scored.truncate(k);
    }
    scored.sort_by(rank);
    Ok(scored.into_iter().map(|(d, key)| (key.clone(), d)).collect())
}

/// The `m` members of a cluster closest to its embedding centroid.
pub fn cluster_center_exemplars(
    index: &EmbeddingIndex,
    cut: &ClusterCut,
    cluster_id: usize,
    m: usize,
) -> Result<Vec<RegionKey>, SimilarityError> {
    if cut.labels.len() != index.len() {
        return Err(SimilarityError::CutMismatch {
            cut: cut.labels.len(),
            index: index.len(),
        });
    }
    let members = cut.members(cluster_id);
    if members.is_empty() {
        return Err(SimilarityError::UnknownCluster(cluster_id));
    }
    let dim = index.entries[members[0]].vector.len();
    let mut centroid = vec![0.0; dim];
    for &i in &members {
        for (c, v) in centroid.iter_mut().zip(&index.entries[i].vector) {
            *c += v;
        }
    }
    for c in &mut centroid {
        *c /= members.len() as f64;
    }
    let mut scored: Vec<(f64, &RegionKey)> = members
        .iter()
        .map(|&i| {
            let e = &index.entries[i];
            (euclidean_distance(&centroid, &e.vector).expect("uniform dimension"), &e.region)
        })
        .collect();
    scored.sort_by(rank);
    Ok(scored.into_iter().take(m).map(|(_, k)| k.clone()).collect())
}
