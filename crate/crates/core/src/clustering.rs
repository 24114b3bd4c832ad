//! Kernel k-means over MI distances, medoid centers and outlier scores.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{self, Embedding3D, EmbeddingError};
use crate::similarity::DistanceMatrix;

pub const MAX_ITERATIONS: usize = 300;
pub const RESTARTS: u64 = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusteringError {
    #[error("bandwidth must be positive, got {0}")]
    NonpositiveSigma(f64),
    #[error("cannot form {k} clusters from {n} nodes")]
    KTooLarge { k: usize, n: usize },
    #[error("cluster count must be at least 1")]
    KZero,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

pub type Result<T, E = ClusteringError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMatrix {
    pub values: DMatrix<f64>,
    pub sigma: f64,
}

impl KernelMatrix {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// Squared feature-space distance between two nodes.
    pub fn feature_distance_sq(&self, a: usize, b: usize) -> f64 {
        let k = &self.values;
        (k[(a, a)] + k[(b, b)] - 2.0 * k[(a, b)]).max(0.0)
    }
}

/// Median of the off-diagonal distances (pairs `a < b`); `None` when there
/// are no pairs.
pub fn median_distance(d: &DistanceMatrix) -> Option<f64> {
    let n = d.len();
    let mut v: Vec<f64> = (0..n)
        .flat_map(|a| ((a + 1)..n).map(move |b| (a, b)))
        .map(|(a, b)| d.get(a, b))
        .collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len();
    Some(if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    })
}

/// Gaussian kernel `exp(−d²/(2σ²))`; σ defaults to the median off-diagonal
/// distance, or 1 when that median is zero.
pub fn kernel_from_distances(d: &DistanceMatrix, sigma: Option<f64>) -> Result<KernelMatrix> {
    let sigma = match sigma {
        Some(s) if !(s > 0.0 && s.is_finite()) => return Err(ClusteringError::NonpositiveSigma(s)),
        Some(s) => s,
        None => match median_distance(d) {
            Some(m) if m > 0.0 => m,
            _ => 1.0,
        },
    };
    let n = d.len();
    let two_s2 = 2.0 * sigma * sigma;
    let values = DMatrix::from_fn(n, n, |a, b| {
        if a == b {
            1.0
        } else {
            (-d.get(a, b).powi(2) / two_s2).exp()
        }
    });
    Ok(KernelMatrix { values, sigma })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelKmeansResult {
    pub labels: Vec<usize>,
    pub objective: f64,
    /// Seed of the winning restart.
    pub seed: u64,
    pub iterations: usize,
    /// Objective after initialization and after every iteration of the
    /// winning restart.
    pub history: Vec<f64>,
}

/// Per-cluster sizes and within-cluster kernel sums used by the distance
/// formula.
struct ClusterStats {
    size: Vec<usize>,
    /// Σ_{j,l∈c} K_jl
    inner: Vec<f64>,
}

fn cluster_stats(kernel: &KernelMatrix, labels: &[usize], k: usize) -> ClusterStats {
    let mut size = vec![0; k];
    let mut inner = vec![0.0; k];
    for (j, &lj) in labels.iter().enumerate() {
        size[lj] += 1;
        for (l, &ll) in labels.iter().enumerate() {
            if ll == lj {
                inner[lj] += kernel.values[(j, l)];
            }
        }
    }
    ClusterStats { size, inner }
}

/// `K_ii − (2/|c|) Σ_{j∈c} K_ij + (1/|c|²) Σ_{j,l∈c} K_jl`; infinite for an
/// empty cluster.
fn distance_to_cluster(
    kernel: &KernelMatrix,
    labels: &[usize],
    stats: &ClusterStats,
    i: usize,
    c: usize,
) -> f64 {
    let size = stats.size[c];
    if size == 0 {
        return f64::INFINITY;
    }
    let s = size as f64;
    let cross: f64 = labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == c)
        .map(|(j, _)| kernel.values[(i, j)])
        .sum();
    (kernel.values[(i, i)] - 2.0 * cross / s + stats.inner[c] / (s * s)).max(0.0)
}

pub fn kernel_kmeans_objective(kernel: &KernelMatrix, labels: &[usize], k: usize) -> f64 {
    let stats = cluster_stats(kernel, labels, k);
    (0..labels.len())
        .map(|i| distance_to_cluster(kernel, labels, &stats, i, labels[i]))
        .sum()
}

/// k-means++ seeding on feature-space distances, then nearest-seed assignment.
fn seed_assignment(kernel: &KernelMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = kernel.len();
    let mut seeds = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| kernel.feature_distance_sq(i, seeds[0]))
        .collect();
    while seeds.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in nearest.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !seeds.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        seeds.push(next);
        for (i, w) in nearest.iter_mut().enumerate() {
            *w = w.min(kernel.feature_distance_sq(i, next));
        }
    }
    (0..n)
        .map(|i| {
            if let Some(c) = seeds.iter().position(|&s| s == i) {
                return c;
            }
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, &s) in seeds.iter().enumerate() {
                let d = kernel.feature_distance_sq(i, s);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            best
        })
        .collect()
}

/// Moves the node farthest from its own cluster into each empty cluster.
fn repair_empty(kernel: &KernelMatrix, labels: &mut [usize], k: usize) {
    loop {
        let stats = cluster_stats(kernel, labels, k);
        let Some(empty) = (0..k).find(|&c| stats.size[c] == 0) else {
            return;
        };
        let mut victim = None;
        let mut worst = f64::NEG_INFINITY;
        for i in 0..labels.len() {
            if stats.size[labels[i]] < 2 {
                continue;
            }
            let d = distance_to_cluster(kernel, labels, &stats, i, labels[i]);
            if d > worst {
                worst = d;
                victim = Some(i);
            }
        }
        labels[victim.expect("k <= n leaves a cluster with two members")] = empty;
    }
}

fn lloyd(kernel: &KernelMatrix, k: usize, seed: u64) -> KernelKmeansResult {
    let n = kernel.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = seed_assignment(kernel, k, &mut rng);
    repair_empty(kernel, &mut labels, k);
    let mut history = vec![kernel_kmeans_objective(kernel, &labels, k)];
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let stats = cluster_stats(kernel, &labels, k);
        let mut next = labels.clone();
        for (i, slot) in next.iter_mut().enumerate() {
            let current = labels[i];
            let mut best = current;
            let mut best_d = distance_to_cluster(kernel, &labels, &stats, i, current);
            for c in 0..k {
                let d = distance_to_cluster(kernel, &labels, &stats, i, c);
                // ties keep the current cluster
                if d < best_d - 1e-15 {
                    best = c;
                    best_d = d;
                }
            }
            *slot = best;
        }
        repair_empty(kernel, &mut next, k);
        let changed = next != labels;
        labels = next;
        history.push(kernel_kmeans_objective(kernel, &labels, k));
        if !changed || n == 0 {
            break;
        }
    }
    KernelKmeansResult {
        objective: *history.last().unwrap(),
        labels,
        seed,
        iterations,
        history,
    }
}

/// Lloyd-style kernel k-means with k-means++ seeding; the best of restarts
/// `seed..seed+9` by `(objective, seed)` wins.
pub fn kernel_kmeans(kernel: &KernelMatrix, k: usize, seed: u64) -> Result<KernelKmeansResult> {
    let n = kernel.len();
    if k == 0 {
        return Err(ClusteringError::KZero);
    }
    if k > n {
        return Err(ClusteringError::KTooLarge { k, n });
    }
    let runs: Vec<KernelKmeansResult> = (0..RESTARTS)
        .into_par_iter()
        .map(|r| lloyd(kernel, k, seed.wrapping_add(r)))
        .collect();
    Ok(runs
        .into_iter()
        .min_by(|a, b| a.objective.total_cmp(&b.objective).then(a.seed.cmp(&b.seed)))
        .expect("at least one restart"))
}

/// Medoid of each cluster: the member minimizing summed squared feature
/// distance to its cluster mates; ties go to the lowest index.
pub fn center_nodes(kernel: &KernelMatrix, labels: &[usize]) -> Vec<usize> {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    (0..k)
        .map(|c| {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            let mut best = usize::MAX;
            let mut best_cost = f64::INFINITY;
            for &i in &members {
                let cost: f64 = members
                    .iter()
                    .map(|&j| kernel.feature_distance_sq(i, j))
                    .sum();
                if cost < best_cost {
                    best = i;
                    best_cost = cost;
                }
            }
            best
        })
        .collect()
}

/// Feature-space distance from each node to its cluster's center.
pub fn outlier_scores(kernel: &KernelMatrix, labels: &[usize], centers: &[usize]) -> Vec<f64> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &c)| kernel.feature_distance_sq(i, centers[c]).sqrt())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterGraph {
    pub labels: Vec<usize>,
    pub k: usize,
    pub centers: Vec<usize>,
    pub embedding: Embedding3D,
    pub distances: DistanceMatrix,
    pub objective: f64,
    pub outlier_scores: Vec<f64>,
    pub sigma: f64,
    pub seed: u64,
}

pub fn build_cluster_graph(
    d: &DistanceMatrix,
    k: usize,
    seed: u64,
    sigma: Option<f64>,
) -> Result<ClusterGraph> {
    let kernel = kernel_from_distances(d, sigma)?;
    let km = kernel_kmeans(&kernel, k, seed)?;
    let centers = center_nodes(&kernel, &km.labels);
    let scores = outlier_scores(&kernel, &km.labels, &centers);
    let embedding = embedding::mds_embed(d)?;
    Ok(ClusterGraph {
        labels: km.labels,
        k,
        centers,
        embedding,
        distances: d.clone(),
        objective: km.objective,
        outlier_scores: scores,
        sigma: kernel.sigma,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: usize,
    pub xyz: [f64; 3],
    pub cluster: usize,
    pub score: f64,
    pub is_center: bool,
}

/// JSON shape handed to the UI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphExport {
    pub nodes: Vec<GraphNode>,
    pub k: usize,
    pub objective: f64,
}

impl ClusterGraph {
    pub fn export(&self) -> GraphExport {
        GraphExport {
            nodes: (0..self.labels.len())
                .map(|i| GraphNode {
                    id: i,
                    xyz: self.embedding.points[i],
                    cluster: self.labels[i],
                    score: self.outlier_scores[i],
                    is_center: self.centers.contains(&i),
                })
                .collect(),
            k: self.k,
            objective: self.objective,
        }
    }
}

/// Adjusted Rand index between two labelings of the same nodes.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    let ka = a.iter().copied().max().map_or(0, |m| m + 1);
    let kb = b.iter().copied().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let c2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().map(|&c| c2(c)).sum();
    let rows: f64 = (0..ka)
        .map(|x| c2((0..kb).map(|y| table[x * kb + y]).sum()))
        .sum();
    let cols: f64 = (0..kb)
        .map(|y| c2((0..ka).map(|x| table[x * kb + y]).sum()))
        .sum();
    let total = c2(n as u64);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if (max - expected).abs() < 1e-300 {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(n: usize, f: impl Fn(usize, usize) -> f64) -> DistanceMatrix {
        DistanceMatrix(DMatrix::from_fn(n, n, |a, b| if a == b { 0.0 } else { f(a.min(b), a.max(b)) }))
    }

    #[test]
    fn kernel_analytic_values() {
        let sigma = 0.7;
        let half = sigma * (2.0 * std::f64::consts::LN_2).sqrt();
        let d = dist(3, |a, b| if (a, b) == (0, 1) { 0.0 } else { half });
        let k = kernel_from_distances(&d, Some(sigma)).unwrap();
        assert_eq!(k.values[(0, 1)], 1.0);
        assert!((k.values[(0, 2)] - 0.5).abs() < 1e-15);
        assert!(matches!(
            kernel_from_distances(&d, Some(0.0)),
            Err(ClusteringError::NonpositiveSigma(_))
        ));
    }

    #[test]
    fn median_bandwidth() {
        let d = dist(3, |a, b| (a + b) as f64 * 0.1);
        // pairs: 0.1, 0.2, 0.3
        let k = kernel_from_distances(&d, None).unwrap();
        assert!((k.sigma - 0.2).abs() < 1e-15);
        let zero = dist(3, |_, _| 0.0);
        assert_eq!(kernel_from_distances(&zero, None).unwrap().sigma, 1.0);
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let d = dist(4, |a, b| 0.1 * (a + 2 * b) as f64);
        let k = kernel_from_distances(&d, None).unwrap();
        let res = kernel_kmeans(&k, 4, 3).unwrap();
        let mut sorted = res.labels.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3]);
        assert!(res.objective.abs() < 1e-15);
    }

    #[test]
    fn two_nodes_two_clusters() {
        let d = dist(2, |_, _| 0.4);
        let k = kernel_from_distances(&d, None).unwrap();
        for seed in 0..5 {
            let res = kernel_kmeans(&k, 2, seed).unwrap();
            assert_ne!(res.labels[0], res.labels[1]);
        }
    }

    #[test]
    fn k_too_large() {
        let d = dist(2, |_, _| 0.4);
        let k = kernel_from_distances(&d, None).unwrap();
        assert_eq!(
            kernel_kmeans(&k, 3, 0),
            Err(ClusteringError::KTooLarge { k: 3, n: 2 })
        );
    }

    #[test]
    fn medoid_prefers_most_similar_node() {
        // node 1 is close to both 0 and 2, which are far apart
        let d = dist(3, |a, b| if (a, b) == (0, 2) { 0.9 } else { 0.3 });
        let k = kernel_from_distances(&d, Some(0.5)).unwrap();
        assert_eq!(center_nodes(&k, &[0, 0, 0]), vec![1]);
        assert_eq!(center_nodes(&k, &[0, 1, 0]), vec![0, 1]);
    }

    #[test]
    fn score_from_half_kernel_is_one() {
        let k = KernelMatrix {
            values: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
            sigma: 1.0,
        };
        let scores = outlier_scores(&k, &[0, 0], &[0]);
        assert_eq!(scores, vec![0.0, 1.0]);
    }

    #[test]
    fn identical_realizations() {
        let d = dist(5, |_, _| 0.0);
        let g = build_cluster_graph(&d, 2, 11, None).unwrap();
        assert!(g.objective.abs() < 1e-15);
        assert!(g.outlier_scores.iter().all(|&s| s == 0.0));
        for c in 0..2 {
            assert!(g.labels.contains(&c));
        }
    }

    #[test]
    fn ari_bounds() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        let ari = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]);
        assert!(ari < 0.0);
    }
}
