use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{rows_for, Partition, PartitionError};
use crate::index::{dot, normalized_mean, EmbedIndex};
use crate::store::InstanceId;

pub const DEFAULT_K: usize = 10;
pub const MAX_ROUNDS: usize = 300;

/// Spherical k-means (cosine distance) with seeded k-means++ initialization.
#[derive(Clone, Debug)]
pub struct SphericalKMeans {
    k: usize,
    seed: u64,
    max_rounds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansRun {
    pub partitions: Vec<Partition>,
    /// Sum of `1 - cos(x, centroid)` after every centroid update.
    pub objective_trace: Vec<f64>,
    pub rounds: usize,
    pub converged: bool,
}

impl SphericalKMeans {
    pub fn new(k: usize) -> Self {
        Self { k, seed: 0, max_rounds: MAX_ROUNDS }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn max_rounds(mut self, rounds: usize) -> Self {
        self.max_rounds = rounds.max(1);
        self
    }

    pub fn run(&self, index: &EmbedIndex, ids: &[InstanceId]) -> Result<KMeansRun, PartitionError> {
        if self.k < 2 {
            return Err(PartitionError::KTooSmall(self.k));
        }
        let rows = rows_for(index, ids)?;
        let n = rows.len();
        if n < self.k {
            return Err(PartitionError::TooFewInstances { n, k: self.k });
        }
        let points: Vec<&[f32]> = rows.iter().map(|&r| index.vector(r)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut centers = init_plus_plus(&points, self.k, &mut rng);

        let mut labels: Vec<usize> = vec![usize::MAX; n];
        let mut trace = Vec::new();
        let mut rounds = 0;
        let mut converged = false;
        while rounds < self.max_rounds {
            rounds += 1;
            let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
            repair_empty(&points, &mut next, &mut centers, self.k);
            if next == labels {
                converged = true;
                break;
            }
            labels = next;
            for (c, center) in centers.iter_mut().enumerate() {
                let members = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| *p);
                if let Some(m) = normalized_mean(members, index.dim()) {
                    *center = m;
                }
            }
            trace.push(objective(&points, &labels, &centers));
        }

        let partitions = (0..self.k)
            .map(|c| {
                let members: Vec<usize> = labels
                    .iter()
                    .enumerate()
                    .filter(|(_, &l)| l == c)
                    .map(|(i, _)| rows[i])
                    .collect();
                Partition::from_rows(c, &members, index, false)
            })
            .collect();
        Ok(KMeansRun { partitions, objective_trace: trace, rounds, converged })
    }
}

/// `k` partitions of `ids` by spherical k-means; deterministic in `(ids, k, seed)`.
pub fn kmeans_partition(
    index: &EmbedIndex,
    ids: &[InstanceId],
    k: usize,
    seed: u64,
) -> Result<Vec<Partition>, PartitionError> {
    Ok(SphericalKMeans::new(k).seed(seed).run(index, ids)?.partitions)
}

fn distance(p: &[f32], c: &[f32]) -> f64 {
    (1.0 - dot(p, c)).max(0.0)
}

fn nearest(p: &[f32], centers: &[Vec<f32>]) -> usize {
    let mut best = 0;
    let mut best_sim = f64::NEG_INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let s = dot(p, center);
        if s > best_sim {
            best_sim = s;
            best = c;
        }
    }
    best
}

fn objective(points: &[&[f32]], labels: &[usize], centers: &[Vec<f32>]) -> f64 {
    points.iter().zip(labels).map(|(p, &l)| distance(p, &centers[l])).sum()
}

fn init_plus_plus(points: &[&[f32]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centers = vec![points[first].to_vec()];
    let mut dmin: Vec<f64> = points.iter().map(|p| distance(p, points[first])).collect();
    while centers.len() < k {
        let weights: Vec<f64> = dmin
            .iter()
            .zip(&chosen)
            .map(|(d, &c)| if c { 0.0 } else { d * d })
            .collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, w) in weights.iter().enumerate() {
                if *w > 0.0 {
                    pick = Some(i);
                    if target < *w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // every remaining point coincides with a center
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centers.push(points[pick].to_vec());
        for (d, p) in dmin.iter_mut().zip(points) {
            *d = d.min(distance(p, points[pick]));
        }
    }
    centers
}

/// Gives every empty cluster the worst-fitting member of the current largest cluster.
fn repair_empty(points: &[&[f32]], labels: &mut [usize], centers: &mut [Vec<f32>], k: usize) {
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let largest = (0..k).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a))).expect("k >= 1");
        if sizes[largest] < 2 {
            break;
        }
        let mut worst = None;
        let mut worst_sim = f64::INFINITY;
        for (i, p) in points.iter().enumerate() {
            if labels[i] == largest {
                let s = dot(p, &centers[largest]);
                if s < worst_sim {
                    worst_sim = s;
                    worst = Some(i);
                }
            }
        }
        let w = worst.expect("largest cluster is non-empty");
        labels[w] = empty;
        centers[empty] = points[w].to_vec();
        sizes[largest] -= 1;
        sizes[empty] = 1;
    }
}
