//! Central finite-difference checks of every analytic gradient.
//!
//! The numeric side only ever calls forward functions and loss values, never
//! the backward pass it is checking.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::loss::{cross_entropy_loss, l2_regression_loss, triplet_loss};
use super::mlp::{MlpConfig, MlpParams};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-4;
pub const REL_TOLERANCE: f64 = 1e-3;
/// Relative errors are measured against `max(|analytic|, |numeric|, REL_FLOOR)`.
pub const REL_FLOOR: f64 = 1e-4;
/// Configurations with a ReLU pre-activation closer than this to zero are redrawn.
pub const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckResult {
    pub name: String,
    pub trials: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn central<F: FnMut(f64) -> f64>(x: f64, mut f: F) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Forward/backward of a random network under the objective `sum(out ⊙ R)`.
/// Returns the worst relative error over every parameter and input entry.
pub fn check_mlp_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    loop {
        let depth = rng.random_range(1..=3);
        let mut dims = vec![rng.random_range(2..=5)];
        for _ in 0..depth {
            dims.push(rng.random_range(2..=6));
        }
        let cfg = MlpConfig::new(dims, rng.random_bool(0.5))?;
        let mut params = MlpParams::init(&cfg, rng.random())?;
        for t in params.learnable_mut() {
            // non-trivial biases, scales and shifts
            for v in t.iter_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
        let batch = rng.random_range(3..=5);
        let x = Array2::from_shape_vec((batch, cfg.input_dim()), random_vec(rng, batch * cfg.input_dim(), 1.0))
            .expect("shape");
        let r = Array2::from_shape_vec((batch, cfg.output_dim()), random_vec(rng, batch * cfg.output_dim(), 1.0))
            .expect("shape");

        let (_, cache) = params.forward_train(&x)?;
        if cache.min_abs_pre_activation() < KINK_MARGIN {
            continue;
        }
        let (grads, dx) = params.backward(&cache, &r)?;

        let objective = |p: &mut MlpParams, input: &Array2<f64>| -> f64 {
            let (out, _) = p.forward_train(input).expect("finite");
            (&out * &r).sum()
        };

        let mut worst = 0.0f64;
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
        for (k, tensor_grad) in analytic.iter().enumerate() {
            for i in 0..tensor_grad.len() {
                let mut probe = params.clone();
                let numeric = central(probe.learnable()[k][i], |v| {
                    probe.learnable_mut()[k][i] = v;
                    objective(&mut probe, &x)
                });
                worst = worst.max(rel_error(tensor_grad[i], numeric));
            }
        }
        for idx in 0..x.len() {
            let mut probe_x = x.clone();
            let mut probe = params.clone();
            let base = x.as_slice().unwrap()[idx];
            let numeric = central(base, |v| {
                probe_x.as_slice_mut().unwrap()[idx] = v;
                objective(&mut probe, &probe_x)
            });
            worst = worst.max(rel_error(dx.as_slice().unwrap()[idx], numeric));
        }
        return Ok(worst);
    }
}

pub fn check_cross_entropy_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    let k = rng.random_range(2..=8);
    let logits = random_vec(rng, k, 3.0);
    let label = rng.random_range(0..k);
    let (_, grad) = cross_entropy_loss(&logits, label)?;
    let mut worst = 0.0f64;
    for i in 0..k {
        let mut probe = logits.clone();
        let numeric = central(logits[i], |v| {
            probe[i] = v;
            cross_entropy_loss(&probe, label).unwrap().0
        });
        worst = worst.max(rel_error(grad[i], numeric));
    }
    Ok(worst)
}

pub fn check_triplet_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    loop {
        let d = rng.random_range(2..=8);
        let (a, p, n) = (random_vec(rng, d, 1.0), random_vec(rng, d, 1.0), random_vec(rng, d, 1.0));
        let margin = rng.random_range(0.1..1.0);
        let out = triplet_loss(&a, &p, &n, margin)?;
        let raw = {
            let dist = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(u, w)| (u - w).powi(2)).sum::<f64>().sqrt();
            (dist(&a, &p), dist(&a, &n))
        };
        // stay away from the hinge and from coincident points
        if (raw.0 - raw.1 + margin).abs() < 1e-2 || raw.0 < 1e-2 || raw.1 < 1e-2 {
            continue;
        }
        let mut worst = 0.0f64;
        let groups = [(&a, &out.grad_anchor, 0usize), (&p, &out.grad_positive, 1), (&n, &out.grad_negative, 2)];
        for (vec, grad, which) in groups {
            for i in 0..d {
                let mut probe = vec.clone();
                let numeric = central(vec[i], |v| {
                    probe[i] = v;
                    let args = match which {
                        0 => (&probe, &p, &n),
                        1 => (&a, &probe, &n),
                        _ => (&a, &p, &probe),
                    };
                    triplet_loss(args.0, args.1, args.2, margin).unwrap().loss
                });
                worst = worst.max(rel_error(grad[i], numeric));
            }
        }
        return Ok(worst);
    }
}

pub fn check_l2_regression_trial(rng: &mut ChaCha8Rng) -> Result<f64> {
    loop {
        let d = rng.random_range(2..=8);
        let (pred, target) = (random_vec(rng, d, 1.0), random_vec(rng, d, 1.0));
        let (loss, grad) = l2_regression_loss(&pred, &target)?;
        if loss <= 1e-3 {
            continue;
        }
        let mut worst = 0.0f64;
        for i in 0..d {
            let mut probe = pred.clone();
            let numeric = central(pred[i], |v| {
                probe[i] = v;
                l2_regression_loss(&probe, &target).unwrap().0
            });
            worst = worst.max(rel_error(grad[i], numeric));
        }
        return Ok(worst);
    }
}

/// Runs `trials` random instances of every check.
pub fn run_all(trials: usize, seed: u64) -> Result<Vec<GradCheckResult>> {
    type Check = fn(&mut ChaCha8Rng) -> Result<f64>;
    let checks: [(&str, Check); 4] = [
        ("mlp_forward_backward", check_mlp_trial),
        ("cross_entropy", check_cross_entropy_trial),
        ("triplet", check_triplet_trial),
        ("l2_regression", check_l2_regression_trial),
    ];
    let mut out = Vec::new();
    for (k, (name, check)) in checks.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
        let mut worst = 0.0f64;
        for _ in 0..trials {
            worst = worst.max(check(&mut rng)?);
        }
        out.push(GradCheckResult {
            name: name.to_string(),
            trials,
            max_rel_error: worst,
            passed: worst <= REL_TOLERANCE,
        });
    }
    Ok(out)
}
