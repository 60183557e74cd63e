//! Normalized spectral clustering on an RBF affinity graph.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kmeans::{check_points, kmeans, nearest, sq_dist, ClusterResult};
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::tensor_io::FeatureVector;

/// Points beyond this count are subsampled (seeded) before the dense eigensolve.
pub const DEFAULT_MAX_POINTS: usize = 1024;
const EMBED_KMEANS_ITERS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub k: usize,
    /// `None` selects `1 / (2 * median^2)` of the pairwise distances.
    pub gamma: Option<f64>,
    pub seed: u64,
    pub max_points: usize,
}

impl SpectralConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self { k, gamma: None, seed, max_points: DEFAULT_MAX_POINTS }
    }
}

#[derive(Debug, Clone)]
pub struct SpectralResult {
    /// Labels cover every input point; centers are per-cluster means in the
    /// original space.
    pub clusters: ClusterResult,
    pub gamma: f64,
    /// Indices of the points that entered the eigensolve (all points when
    /// no subsampling was needed).
    pub sample: Vec<usize>,
}

/// `A_ij = exp(-gamma * |p_i - p_j|^2)`, row-major `n × n`.
pub fn rbf_affinity(points: &[FeatureVector], gamma: f64) -> Result<Vec<f64>> {
    rbf_affinity_with(Exec::default(), points, gamma)
}

pub fn rbf_affinity_with(exec: Exec, points: &[FeatureVector], gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::NonPositiveGamma(gamma));
    }
    let n = points.len();
    let rows = exec.map_range(n, |i| {
        (0..n)
            .map(|j| if i == j { 1.0 } else { (-gamma * sq_dist(points[i].as_slice(), points[j].as_slice())).exp() })
            .collect::<Vec<f64>>()
    });
    Ok(rows.concat())
}

/// Median-distance bandwidth `1 / (2 * median^2)` over all pairs `i < j`.
/// Falls back to the mean non-zero distance when the median is zero, and to
/// `1.0` when every point coincides.
pub fn median_gamma(points: &[FeatureVector]) -> f64 {
    let n = points.len();
    let mut d: Vec<f64> = par::map_range(n, |i| {
        (i + 1..n).map(|j| sq_dist(points[i].as_slice(), points[j].as_slice()).sqrt()).collect::<Vec<f64>>()
    })
    .concat();
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let median = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
    let scale = if median > 0.0 {
        median
    } else {
        let nz: Vec<f64> = d.into_iter().filter(|&v| v > 0.0).collect();
        if nz.is_empty() {
            return 1.0;
        }
        nz.iter().sum::<f64>() / nz.len() as f64
    };
    1.0 / (2.0 * scale * scale)
}

/// Rows of the `k` eigenvectors of `I - D^{-1/2} A D^{-1/2}` with the smallest
/// eigenvalues, each row rescaled to unit norm (all-zero rows stay zero).
pub fn spectral_embedding(affinity: &[f64], n: usize, k: usize) -> Result<Vec<FeatureVector>> {
    if affinity.len() != n * n {
        return Err(Error::DimMismatch { expected: n * n, found: affinity.len() });
    }
    if n < k {
        return Err(Error::TooFewPoints { needed: k, have: n });
    }
    let degree: Vec<f64> = (0..n).map(|i| affinity[i * n..(i + 1) * n].iter().sum()).collect();
    let inv_sqrt: Vec<f64> = degree.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
    let laplacian = DMatrix::from_fn(n, n, |i, j| {
        let m = affinity[i * n + j] * inv_sqrt[i] * inv_sqrt[j];
        if i == j {
            1.0 - m
        } else {
            -m
        }
    });
    let eig = SymmetricEigen::try_new(laplacian, f64::EPSILON, 0)
        .ok_or_else(|| Error::EigenFailure(format!("no convergence on {n}x{n} Laplacian")))?;
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenFailure("non-finite eigenvalue".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));

    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(k);
    for &c in order.iter().take(k) {
        let mut col: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        // fix the sign: largest-magnitude entry (lowest index on ties) positive
        let mut pivot = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        if col[pivot] < 0.0 {
            col.iter_mut().for_each(|v| *v = -*v);
        }
        columns.push(col);
    }
    Ok((0..n)
        .map(|i| {
            let row: Vec<f64> = columns.iter().map(|c| c[i]).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            FeatureVector(if norm > 0.0 { row.into_iter().map(|v| v / norm).collect() } else { row })
        })
        .collect())
}

/// Spectral clustering: RBF affinity, symmetric normalized Laplacian, unit-row
/// eigenvector embedding, k-means on the embedding. Centers are reported as
/// per-cluster means of the original points; points left out by subsampling
/// join the nearest of those centers.
pub fn spectral_cluster(points: &[FeatureVector], cfg: &SpectralConfig) -> Result<SpectralResult> {
    let dim = check_points(points, cfg.k)?;
    let n = points.len();
    let sample: Vec<usize> = if n > cfg.max_points.max(cfg.k) {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5a3e);
        let mut idx = sample(&mut rng, n, cfg.max_points.max(cfg.k)).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };
    let subset: Vec<FeatureVector> = sample.iter().map(|&i| points[i].clone()).collect();
    let gamma = match cfg.gamma {
        Some(g) => g,
        None => median_gamma(&subset),
    };
    let affinity = rbf_affinity(&subset, gamma)?;
    let embedding = spectral_embedding(&affinity, subset.len(), cfg.k)?;
    let assignment = kmeans(&embedding, cfg.k, cfg.seed, EMBED_KMEANS_ITERS)?;

    let mut sums = vec![vec![0.0f64; dim]; cfg.k];
    let mut counts = vec![0usize; cfg.k];
    for (p, &l) in subset.iter().zip(&assignment.labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p.as_slice()) {
            *s += v;
        }
    }
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EigenFailure(format!("embedding produced empty cluster {c}")));
    }
    let centers: Vec<FeatureVector> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| FeatureVector(s.into_iter().map(|v| v / c as f64).collect()))
        .collect();

    let mut labels = vec![usize::MAX; n];
    for (&i, &l) in sample.iter().zip(&assignment.labels) {
        labels[i] = l;
    }
    let rest: Vec<usize> = (0..n).filter(|&i| labels[i] == usize::MAX).collect();
    let assigned = par::map_slice(&rest, |&i| nearest(points[i].as_slice(), &centers).0);
    for (&i, l) in rest.iter().zip(assigned) {
        labels[i] = l;
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p.as_slice(), centers[l].as_slice())).sum();
    Ok(SpectralResult { clusters: ClusterResult { centers, labels, inertia }, gamma, sample })
}
