//! Proposed partitions of the unassigned instances.
//!
//! Two clusterers are offered: spherical k-means ([`kmeans_partition`]) and a
//! hierarchical density-based clusterer over cosine distance
//! ([`density_partition`]). Both work on an immutable [`EmbedIndex`] snapshot.

mod density;
mod kmeans;

pub use density::{default_min_cluster_size, density_partition};
pub use kmeans::{kmeans_partition, KMeansRun, SphericalKMeans, DEFAULT_K, MAX_ROUNDS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::{dot, normalized_mean, EmbedIndex};
use crate::store::InstanceId;

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("k must be at least 2 (got {0})")]
    KTooSmall(usize),
    #[error("cannot form {k} partitions from {n} instances")]
    TooFewInstances { n: usize, k: usize },
    #[error("min_cluster_size must be at least 2 (got {0})")]
    MinClusterSize(usize),
    #[error("instance `{0}` has no embedding in the index")]
    MissingEmbedding(InstanceId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub id: usize,
    /// Members sorted by id.
    pub members: Vec<InstanceId>,
    /// Unit-norm mean of member embeddings.
    pub centroid: Vec<f32>,
    /// Mean member-to-centroid cosine.
    pub cohesion: f64,
    /// Set on the density clusterer's bucket of points outside every dense region.
    #[serde(default)]
    pub noise: bool,
}

impl Partition {
    pub(crate) fn from_rows(id: usize, rows: &[usize], index: &EmbedIndex, noise: bool) -> Self {
        let centroid = normalized_mean(rows.iter().map(|&r| index.vector(r)), index.dim())
            .unwrap_or_else(|| index.vector(rows[0]).to_vec());
        let cohesion = rows.iter().map(|&r| dot(index.vector(r), &centroid)).sum::<f64>() / rows.len() as f64;
        let mut members: Vec<InstanceId> = rows.iter().map(|&r| index.ids()[r].clone()).collect();
        members.sort();
        Self { id, members, centroid, cohesion, noise }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankOrder {
    ClosestFirst,
    FarthestFirst,
}

/// Members with their cosine to the partition centroid, in the requested
/// order. Ties go to the smaller id in both orders.
pub fn rank_members_scored(
    partition: &Partition,
    index: &EmbedIndex,
    order: RankOrder,
) -> Result<Vec<(InstanceId, f64)>, PartitionError> {
    let mut scored = partition
        .members
        .iter()
        .map(|id| {
            index
                .vector_of(id)
                .map(|v| (id.clone(), dot(v, &partition.centroid)))
                .ok_or_else(|| PartitionError::MissingEmbedding(id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    scored.sort_by(|a, b| {
        let by_sim = match order {
            RankOrder::ClosestFirst => b.1.total_cmp(&a.1),
            RankOrder::FarthestFirst => a.1.total_cmp(&b.1),
        };
        by_sim.then_with(|| a.0.cmp(&b.0))
    });
    Ok(scored)
}

pub fn rank_members(
    partition: &Partition,
    index: &EmbedIndex,
    order: RankOrder,
) -> Result<Vec<InstanceId>, PartitionError> {
    Ok(rank_members_scored(partition, index, order)?.into_iter().map(|(id, _)| id).collect())
}

/// Size balance of a partitioning, reported instead of enforced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceStats {
    pub count: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub mean_size: f64,
    /// Coefficient of variation of the sizes.
    pub size_cv: f64,
}

pub fn balance(partitions: &[Partition]) -> BalanceStats {
    let sizes: Vec<f64> = partitions.iter().filter(|p| !p.noise).map(|p| p.len() as f64).collect();
    if sizes.is_empty() {
        return BalanceStats { count: 0, min_size: 0, max_size: 0, mean_size: 0.0, size_cv: 0.0 };
    }
    let mean = sizes.iter().sum::<f64>() / sizes.len() as f64;
    let var = sizes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / sizes.len() as f64;
    BalanceStats {
        count: sizes.len(),
        min_size: sizes.iter().cloned().fold(f64::INFINITY, f64::min) as usize,
        max_size: sizes.iter().cloned().fold(0.0, f64::max) as usize,
        mean_size: mean,
        size_cv: if mean > 0.0 { var.sqrt() / mean } else { 0.0 },
    }
}

pub(crate) fn rows_for(index: &EmbedIndex, ids: &[InstanceId]) -> Result<Vec<usize>, PartitionError> {
    let mut sorted: Vec<&InstanceId> = ids.iter().collect();
    sorted.sort();
    sorted.dedup();
    sorted
        .into_iter()
        .map(|id| index.row_of(id).ok_or_else(|| PartitionError::MissingEmbedding(id.clone())))
        .collect()
}
