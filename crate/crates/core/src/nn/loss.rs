//! Losses with analytic gradients.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weights of the combined re-identification objective
/// `alpha1 * cross_entropy + alpha2 * triplet`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReidLossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
    pub triplet_margin: f64,
}

impl Default for ReidLossWeights {
    fn default() -> Self {
        Self { alpha1: 0.1, alpha2: 0.9, triplet_margin: 0.3 }
    }
}

impl ReidLossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.alpha1 < 0.0 || self.alpha2 < 0.0 || self.alpha1 + self.alpha2 <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be non-negative with a positive sum, got {} and {}",
                self.alpha1, self.alpha2
            )));
        }
        if !(self.triplet_margin > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "triplet margin must be positive, got {}",
                self.triplet_margin
            )));
        }
        Ok(())
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch { expected: a.len(), found: b.len() });
    }
    Ok(())
}

/// Softmax cross-entropy; returns the loss and `d loss / d logits`.
pub fn cross_entropy_loss(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange { label, classes: logits.len() });
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = (sum.ln() + max - logits[label]).max(0.0);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

fn diff_and_norm(a: &[f64], b: &[f64]) -> (Vec<f64>, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    (d, n)
}

/// Unit direction of `d` (zero vector when `norm == 0`).
fn unit(d: &[f64], norm: f64) -> Vec<f64> {
    if norm > 0.0 {
        d.iter().map(|v| v / norm).collect()
    } else {
        vec![0.0; d.len()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletOutput {
    pub loss: f64,
    pub grad_anchor: Vec<f64>,
    pub grad_positive: Vec<f64>,
    pub grad_negative: Vec<f64>,
}

/// `max(0, |a - p| - |a - n| + margin)` with Euclidean distances.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> Result<TripletOutput> {
    check_dims(anchor, positive)?;
    check_dims(anchor, negative)?;
    let (dap, nap) = diff_and_norm(anchor, positive);
    let (dan, nan) = diff_and_norm(anchor, negative);
    let raw = (nap + margin) - nan;
    let dim = anchor.len();
    if raw <= 0.0 {
        return Ok(TripletOutput {
            loss: 0.0,
            grad_anchor: vec![0.0; dim],
            grad_positive: vec![0.0; dim],
            grad_negative: vec![0.0; dim],
        });
    }
    let up = unit(&dap, nap);
    let un = unit(&dan, nan);
    Ok(TripletOutput {
        loss: raw,
        grad_anchor: up.iter().zip(&un).map(|(p, n)| p - n).collect(),
        grad_positive: up.iter().map(|v| -v).collect(),
        grad_negative: un,
    })
}

/// Euclidean norm of the residual and its gradient w.r.t. `pred`.
/// The gradient at an exactly zero residual is the zero vector.
pub fn l2_regression_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_dims(pred, target)?;
    let (r, n) = diff_and_norm(pred, target);
    Ok((n, unit(&r, n)))
}

/// Batch-hard triplet loss: for each anchor with at least one positive and one
/// negative in the batch, the farthest positive and the nearest negative form
/// the triplet (ties go to the lowest row index). Returns the mean over
/// contributing anchors and the gradient w.r.t. every embedding row.
pub fn batch_hard_triplet_loss(embeddings: &Array2<f64>, labels: &[usize], margin: f64) -> Result<(f64, Array2<f64>)> {
    let n = embeddings.nrows();
    if labels.len() != n {
        return Err(Error::DimMismatch { expected: n, found: labels.len() });
    }
    let rows: Vec<&[f64]> = (0..n).map(|i| embeddings.row(i).to_slice().expect("standard layout")).collect();
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = diff_and_norm(rows[i], rows[j]).1;
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut grad = Array2::<f64>::zeros(embeddings.dim());
    let mut total = 0.0;
    let mut anchors = 0usize;
    for i in 0..n {
        let mut hardest_pos: Option<usize> = None;
        let mut hardest_neg: Option<usize> = None;
        for j in 0..n {
            if j == i {
                continue;
            }
            if labels[j] == labels[i] {
                if hardest_pos.is_none_or(|p| dist[i * n + j] > dist[i * n + p]) {
                    hardest_pos = Some(j);
                }
            } else if hardest_neg.is_none_or(|q| dist[i * n + j] < dist[i * n + q]) {
                hardest_neg = Some(j);
            }
        }
        let (Some(p), Some(q)) = (hardest_pos, hardest_neg) else { continue };
        anchors += 1;
        let out = triplet_loss(rows[i], rows[p], rows[q], margin)?;
        total += out.loss;
        for (k, g) in out.grad_anchor.iter().enumerate() {
            grad[[i, k]] += g;
            grad[[p, k]] += out.grad_positive[k];
            grad[[q, k]] += out.grad_negative[k];
        }
    }
    if anchors == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / anchors as f64;
    grad.mapv_inplace(|g| g * scale);
    Ok((total * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_ln_k() {
        for k in 2..10 {
            let (loss, grad) = cross_entropy_loss(&vec![0.7; k], 1).unwrap();
            assert!((loss - (k as f64).ln()).abs() < 1e-12);
            assert!((grad.iter().sum::<f64>()).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_logits_approach_zero() {
        let (loss, _) = cross_entropy_loss(&[800.0, 0.0, -3.0], 0).unwrap();
        assert!(loss < 1e-300 || loss == 0.0);
        assert!(matches!(cross_entropy_loss(&[0.0, 1.0], 2), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn cross_entropy_matches_log_sum_exp() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let logits: Vec<f64> = (0..6).map(|_| rng.random_range(-4.0..4.0)).collect();
            let label = rng.random_range(0..6);
            let lse = logits.iter().map(|z: &f64| z.exp()).sum::<f64>().ln();
            let (loss, _) = cross_entropy_loss(&logits, label).unwrap();
            assert!((loss - (lse - logits[label])).abs() < 1e-12);
        }
    }

    #[test]
    fn triplet_boundary_and_degenerate() {
        let a = [0.0, 0.0];
        let out = triplet_loss(&a, &a, &[0.3, 0.0], 0.3).unwrap();
        assert_eq!(out.loss, 0.0);
        let same = triplet_loss(&a, &a, &a, 0.3).unwrap();
        assert_eq!(same.loss, 0.3);
        assert!(matches!(triplet_loss(&a, &[1.0], &a, 0.3), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn triplet_matches_hinge_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let v = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..4).map(|_| rng.random_range(-1.0..1.0)).collect() };
            let (a, p, n) = (v(&mut rng), v(&mut rng), v(&mut rng));
            let d = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, w)| (u - w).powi(2)).sum::<f64>().sqrt();
            let expected = (d(&a, &p) - d(&a, &n) + 0.5).max(0.0);
            let got = triplet_loss(&a, &p, &n, 0.5).unwrap();
            assert!((got.loss - expected).abs() < 1e-12);
            assert!(got.loss >= 0.0);
            if got.loss == 0.0 {
                assert!(got.grad_anchor.iter().all(|&g| g == 0.0));
            }
        }
    }

    #[test]
    fn l2_regression_cases() {
        assert_eq!(l2_regression_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), (0.0, vec![0.0, 0.0]));
        let (loss, grad) = l2_regression_loss(&[3.0, 4.0], &[0.0, 0.0]).unwrap();
        assert_eq!(loss, 5.0);
        assert_eq!(grad, vec![0.6, 0.8]);
    }

    #[test]
    fn batch_hard_picks_extremes() {
        // two identities on a line: 0,1 | 5,10
        let e = ndarray::array![[0.0], [1.0], [5.0], [10.0]];
        let (loss, grad) = batch_hard_triplet_loss(&e, &[0, 0, 1, 1], 0.3).unwrap();
        // anchor 0: pos 1 (d=1), neg 2 (d=5) -> 0; anchor 1: pos 0 (1), neg 2 (4) -> 0
        // anchor 2: pos 3 (5), neg 1 (4) -> 1.3; anchor 3: pos 2 (5), neg 1 (9) -> 0
        assert!((loss - 1.3 / 4.0).abs() < 1e-12);
        assert!((grad[[2, 0]] - (-1.0 + -1.0) / 4.0).abs() < 1e-12);
        assert!((grad[[3, 0]] - 1.0 / 4.0).abs() < 1e-12);
        assert!((grad[[1, 0]] - 1.0 / 4.0).abs() < 1e-12);
    }
}
