use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::tensor_io::FeatureVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub centers: Vec<FeatureVector>,
    pub labels: Vec<usize>,
    pub inertia: f64,
}

/// k-means output together with the inertia after every Lloyd iteration.
#[derive(Debug, Clone)]
pub struct KMeansRun {
    pub result: ClusterResult,
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn check_points(points: &[FeatureVector], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if points.len() < k {
        return Err(Error::TooFewPoints { needed: k, have: points.len() });
    }
    let dim = points[0].dim();
    if let Some(p) = points.iter().find(|p| p.dim() != dim) {
        return Err(Error::DimMismatch { expected: dim, found: p.dim() });
    }
    Ok(dim)
}

/// Index of the nearest center; ties go to the lowest center index.
pub(crate) fn nearest(point: &[f64], centers: &[FeatureVector]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(point, center.as_slice());
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding. The first center is drawn uniformly; later ones with
/// probability proportional to squared distance, scanning cumulative weight
/// from the lowest index. When every point coincides with a center the
/// lowest-index point is taken.
fn seed_centers(points: &[FeatureVector], k: usize, rng: &mut ChaCha8Rng) -> Vec<FeatureVector> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p.as_slice(), centers[0].as_slice())).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc >= target && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            0
        };
        let c = points[pick].clone();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p.as_slice(), c.as_slice()));
        }
        centers.push(c);
    }
    centers
}

fn assign(points: &[FeatureVector], centers: &[FeatureVector]) -> (Vec<usize>, f64) {
    let pairs = par::map_slice(points, |p| nearest(p.as_slice(), centers));
    let inertia = pairs.iter().map(|&(_, d)| d).sum();
    (pairs.into_iter().map(|(c, _)| c).collect(), inertia)
}

fn update(points: &[FeatureVector], labels: &[usize], k: usize, dim: usize) -> (Vec<FeatureVector>, Vec<usize>) {
    let mut sums = vec![vec![0.0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p.as_slice()) {
            *s += v;
        }
    }
    let centers = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| FeatureVector(if c > 0 { s.into_iter().map(|v| v / c as f64).collect() } else { s }))
        .collect();
    (centers, counts)
}

pub const DEFAULT_RESTARTS: usize = 20;

/// Best of [`DEFAULT_RESTARTS`] Lloyd runs (lowest inertia, earliest run on ties).
pub fn kmeans(points: &[FeatureVector], k: usize, seed: u64, max_iter: usize) -> Result<ClusterResult> {
    kmeans_restarts(points, k, seed, max_iter, DEFAULT_RESTARTS)
}

pub fn kmeans_restarts(
    points: &[FeatureVector],
    k: usize,
    seed: u64,
    max_iter: usize,
    restarts: usize,
) -> Result<ClusterResult> {
    let mut best: Option<ClusterResult> = None;
    for r in 0..restarts.max(1) {
        let run = kmeans_run(points, k, seed.wrapping_add(r as u64), max_iter)?.result;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// One run from a k-means++ start. Lloyd iterations run to an assignment
/// fixpoint; there single-point transfers are tried, and Lloyd resumes if any
/// point moved. Stops when neither changes anything or after `max_iter`
/// center updates.
pub fn kmeans_run(points: &[FeatureVector], k: usize, seed: u64, max_iter: usize) -> Result<KMeansRun> {
    let dim = check_points(points, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_centers(points, k, &mut rng);
    let (mut labels, mut inertia) = assign(points, &centers);
    let mut history = vec![inertia];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let (mut new_centers, counts) = update(points, &labels, k, dim);
        reseed_empty(points, &labels, &mut new_centers, &counts);
        centers = new_centers;
        let (new_labels, new_inertia) = assign(points, &centers);
        let converged = new_labels == labels;
        labels = new_labels;
        inertia = new_inertia;
        history.push(inertia);
        if converged {
            let (mut means, mut counts) = update(points, &labels, k, dim);
            if !transfer_pass(points, &mut labels, &mut means, &mut counts) {
                break;
            }
            centers = update(points, &labels, k, dim).0;
            inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p.as_slice(), centers[l].as_slice())).sum();
            history.push(inertia);
        }
    }
    Ok(KMeansRun { result: ClusterResult { centers, labels, inertia }, inertia_history: history, iterations })
}

/// One sweep of single-point transfers. Moving `x` from cluster `a` (size
/// `na`) to `b` (size `nb`) changes the total squared error by
/// `nb/(nb+1)·|x−c_b|² − na/(na−1)·|x−c_a|²`; each point goes to the cluster
/// with the most negative change. `means` and `counts` are kept current.
fn transfer_pass(
    points: &[FeatureVector],
    labels: &mut [usize],
    means: &mut [FeatureVector],
    counts: &mut [usize],
) -> bool {
    let mut moved = false;
    for (i, p) in points.iter().enumerate() {
        let from = labels[i];
        if counts[from] <= 1 {
            continue;
        }
        let x = p.as_slice();
        let na = counts[from] as f64;
        let removal = na / (na - 1.0) * sq_dist(x, means[from].as_slice());
        let mut best: Option<(usize, f64)> = None;
        for (c, m) in means.iter().enumerate() {
            if c == from {
                continue;
            }
            let nb = counts[c] as f64;
            let addition = nb / (nb + 1.0) * sq_dist(x, m.as_slice());
            if best.is_none_or(|(_, b)| addition < b) {
                best = Some((c, addition));
            }
        }
        let Some((to, addition)) = best else { continue };
        if addition < removal - 1e-12 * removal {
            let nb = counts[to] as f64;
            for (d, &v) in x.iter().enumerate() {
                means[from].0[d] = (na * means[from].0[d] - v) / (na - 1.0);
                means[to].0[d] = (nb * means[to].0[d] + v) / (nb + 1.0);
            }
            counts[from] -= 1;
            counts[to] += 1;
            labels[i] = to;
            moved = true;
        }
    }
    moved
}

/// Moves each empty cluster onto the point farthest from its own center,
/// skipping points that are the sole member of their cluster.
fn reseed_empty(points: &[FeatureVector], labels: &[usize], centers: &mut [FeatureVector], counts: &[usize]) {
    let mut counts = counts.to_vec();
    let mut taken = vec![false; points.len()];
    for c in 0..centers.len() {
        if counts[c] > 0 {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            let own = labels[i];
            if taken[i] || counts[own] <= 1 {
                continue;
            }
            let d = sq_dist(p.as_slice(), centers[own].as_slice());
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        if let Some((i, _)) = best {
            taken[i] = true;
            counts[labels[i]] -= 1;
            counts[c] = 1;
            centers[c] = points[i].clone();
        }
    }
}

/// Fraction of points whose cluster's majority truth label matches their own.
pub fn purity(labels: &[usize], truth: &[usize]) -> f64 {
    use std::collections::HashMap;
    if labels.is_empty() {
        return 1.0;
    }
    let mut table: HashMap<usize, HashMap<usize, usize>> = HashMap::new();
    for (&l, &t) in labels.iter().zip(truth) {
        *table.entry(l).or_default().entry(t).or_default() += 1;
    }
    let hits: usize = table.values().map(|row| row.values().copied().max().unwrap_or(0)).sum();
    hits as f64 / labels.len() as f64
}
