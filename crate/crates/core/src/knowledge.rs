//! The knowledge dataset: stored segment descriptors, spectral clustering
//! into categories, and nearest-centroid categorization.

use alloc::vec;
use alloc::vec::Vec;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::hog::{cosine_similarity, HogDescriptor, HOG_LEN};
use crate::linalg::{kmeans, symmetric_eigen, NoConvergence, SquareMatrix};
use crate::rng::stream_rng;
use crate::SeedRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    pub k_max: usize,
    /// Environment steps between re-clusterings.
    pub recluster_period: u64,
    pub dataset_cap: usize,
    /// Minimum cosine similarity to the nearest centroid to accept a label.
    pub theta_cat: f64,
    /// Largest number of stored items the affinity matrix is built on.
    pub spectral_sample: usize,
    pub max_sweeps: usize,
    pub kmeans_iterations: usize,
    pub kmeans_restarts: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            k_max: 8,
            recluster_period: 2000,
            dataset_cap: 4096,
            theta_cat: 0.9,
            spectral_sample: 512,
            max_sweeps: 60,
            kmeans_iterations: 100,
            kmeans_restarts: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KnowledgeError {
    #[error("dataset has {size} items, clustering needs at least {needed}")]
    TooSmall { size: usize, needed: usize },
    #[error(transparent)]
    Eigen(#[from] NoConvergence),
    #[error("dataset has not been clustered yet")]
    NotClustered,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub descriptor: HogDescriptor,
    pub step: u64,
    pub assignment: Option<usize>,
}

/// Result of one re-clustering, computed on a snapshot of the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Unit-norm mean descriptor per non-empty cluster.
    pub centroids: Vec<HogDescriptor>,
    /// Clusters that came out of k-means empty or duplicated and were dropped.
    pub dropped_clusters: usize,
    /// Laplacian spectrum of the clustered sample, ascending.
    pub eigenvalues: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct KnowledgeDataset {
    items: Vec<Item>,
    centroids: Vec<HogDescriptor>,
    version: u32,
    seen: u64,
    rng: SeedRng,
}

impl PartialEq for KnowledgeDataset {
    fn eq(&self, other: &Self) -> bool {
        self.items == other.items && self.centroids == other.centroids && self.version == other.version && self.seen == other.seen
    }
}

fn nearest(centroids: &[HogDescriptor], d: &HogDescriptor) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in centroids.iter().enumerate() {
        let s = cosine_similarity(&c.0, &d.0);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best
}

fn normalized(v: &[f64]) -> HogDescriptor {
    let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    let mut out = [0.0; HOG_LEN];
    if n > 0.0 {
        for (o, x) in out.iter_mut().zip(v) {
            *o = x / n;
        }
    }
    HogDescriptor(out)
}

impl KnowledgeDataset {
    /// Empty dataset; `seed` drives the reservoir subsampling.
    pub fn new(seed: u64) -> Self {
        KnowledgeDataset { items: Vec::new(), centroids: Vec::new(), version: 0, seen: 0, rng: stream_rng(seed, 0x6b6e) }
    }

    /// Rebuilds a dataset from stored parts (checkpoint loading).
    pub fn from_parts(items: Vec<Item>, centroids: Vec<HogDescriptor>, version: u32, seen: u64, seed: u64) -> Self {
        KnowledgeDataset { items, centroids, version, seen, rng: stream_rng(seed ^ seen, 0x6b6e) }
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn centroids(&self) -> &[HogDescriptor] {
        &self.centroids
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    /// Total descriptors ever offered to the dataset.
    pub fn seen(&self) -> u64 {
        self.seen
    }

    /// Adds a descriptor. Beyond `dataset_cap` the store is a uniform
    /// reservoir sample of everything inserted so far.
    pub fn insert(&mut self, descriptor: HogDescriptor, step: u64, params: &ClusterParams) {
        let assignment = if self.version >= 1 { nearest(&self.centroids, &descriptor).map(|n| n.0) } else { None };
        let item = Item { descriptor, step, assignment };
        self.seen += 1;
        if self.items.len() < params.dataset_cap {
            self.items.push(item);
        } else {
            let j = self.rng.random_range(0..self.seen);
            if (j as usize) < params.dataset_cap {
                self.items[j as usize] = item;
            }
        }
    }

    /// Spectral clustering of a snapshot; the dataset itself is untouched
    /// until [`KnowledgeDataset::install`].
    pub fn recluster(&self, params: &ClusterParams, seed: u64) -> Result<Clustering, KnowledgeError> {
        let k = params.k_max;
        if self.items.len() < k.max(2) {
            return Err(KnowledgeError::TooSmall { size: self.items.len(), needed: k.max(2) });
        }
        let mut rng = stream_rng(seed, 0xc105);
        let mut chosen: Vec<usize> = if self.items.len() > params.spectral_sample {
            sample(&mut rng, self.items.len(), params.spectral_sample).into_vec()
        } else {
            (0..self.items.len()).collect()
        };
        chosen.sort_unstable();
        let pts: Vec<&HogDescriptor> = chosen.iter().map(|&i| &self.items[i].descriptor).collect();
        let lap = normalized_laplacian(&pts);
        let eig = symmetric_eigen(&lap, params.max_sweeps)?;
        let n = pts.len();
        let cols = k.min(n);
        let embedding: Vec<Vec<f64>> = (0..n)
            .map(|r| {
                let row: Vec<f64> = (0..cols).map(|c| eig.vectors.get(r, c)).collect();
                let norm = libm::sqrt(row.iter().map(|x| x * x).sum::<f64>());
                if norm > 0.0 { row.iter().map(|x| x / norm).collect() } else { row }
            })
            .collect();
        let km = kmeans(&embedding, k, params.kmeans_iterations, params.kmeans_restarts, &mut rng);
        let mut sums = vec![[0.0; HOG_LEN]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in pts.iter().zip(&km.assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p.0.iter()) {
                *s += x;
            }
        }
        let mut centroids: Vec<HogDescriptor> = Vec::new();
        let mut dropped = 0;
        for c in 0..k {
            if counts[c] == 0 {
                dropped += 1;
                continue;
            }
            let cand = normalized(&sums[c]);
            // clusters with the same mean descriptor are one category
            if centroids.iter().any(|e| cosine_similarity(&e.0, &cand.0) >= 1.0 - 1e-12) {
                dropped += 1;
                continue;
            }
            centroids.push(cand);
        }
        Ok(Clustering { centroids, dropped_clusters: dropped, eigenvalues: eig.values })
    }

    /// Installs new centroids, relabels every stored item and bumps the
    /// version.
    pub fn install(&mut self, clustering: &Clustering) {
        self.centroids = clustering.centroids.clone();
        for item in &mut self.items {
            item.assignment = nearest(&self.centroids, &item.descriptor).map(|n| n.0);
        }
        self.version += 1;
    }

    /// Nearest centroid by cosine similarity; `None` when it is below
    /// `theta_cat`. Ties go to the lowest index.
    pub fn categorize(&self, descriptor: &HogDescriptor, params: &ClusterParams) -> Result<Option<usize>, KnowledgeError> {
        if self.version == 0 {
            return Err(KnowledgeError::NotClustered);
        }
        Ok(nearest(&self.centroids, descriptor).filter(|&(_, s)| s >= params.theta_cat).map(|(i, _)| i))
    }
}

/// L = I − D^(−1/2) W D^(−1/2) with W_ij = max(0, cos(d_i, d_j)) off the
/// diagonal and W_ii = 0. Isolated points get a zero row in the normalized
/// affinity.
pub fn normalized_laplacian(points: &[&HogDescriptor]) -> SquareMatrix {
    let n = points.len();
    let mut w = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in i + 1..n {
            let a = cosine_similarity(&points[i].0, &points[j].0).max(0.0);
            w.set(i, j, a);
            w.set(j, i, a);
        }
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = (0..n).map(|j| w.get(i, j)).sum();
            if d > 0.0 { 1.0 / libm::sqrt(d) } else { 0.0 }
        })
        .collect();
    let mut l = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let id = if i == j { 1.0 } else { 0.0 };
            l.set(i, j, id - inv_sqrt[i] * w.get(i, j) * inv_sqrt[j]);
        }
    }
    l
}
