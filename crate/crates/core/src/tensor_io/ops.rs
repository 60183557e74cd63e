//! Pooling, concatenation, resampling and distances over feature grids.

use super::types::{BinaryMask, FeatureMaps, FeatureVector, ProbabilityMatrix};
use crate::error::{Error, Result};

/// Per-channel mean of the positions selected by `mask`.
pub fn masked_gap(maps: &FeatureMaps, mask: &BinaryMask) -> Result<FeatureVector> {
    let shape = (maps.height(), maps.width());
    if mask.shape() != shape {
        return Err(Error::ShapeMismatch { expected: shape, found: mask.shape() });
    }
    let c = maps.channels();
    let mut acc = vec![0.0f64; c];
    let mut count = 0usize;
    for (p, &on) in mask.data().iter().enumerate() {
        if on {
            count += 1;
            for (a, &x) in acc.iter_mut().zip(maps.position(p)) {
                *a += x as f64;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask);
    }
    let n = count as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(FeatureVector(acc))
}

/// Plain global average pooling.
pub fn gap(maps: &FeatureMaps) -> FeatureVector {
    let ones = BinaryMask::filled(maps.height(), maps.width(), true);
    masked_gap(maps, &ones).expect("full mask is never empty")
}

pub fn concat(vectors: &[FeatureVector]) -> Result<FeatureVector> {
    if vectors.is_empty() {
        return Err(Error::EmptyList);
    }
    Ok(FeatureVector(vectors.iter().flat_map(|v| v.0.iter().copied()).collect()))
}

/// Source coordinate and interpolation weight along one axis, half-pixel aligned:
/// output sample `k` sits at `(k + 0.5) * in / out - 0.5` in source space, clamped
/// to the source extent.
fn half_pixel_taps(out: usize, input: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / out as f64;
    (0..out)
        .map(|k| {
            let src = ((k as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

/// Bilinear resampling of a probability grid using the half-pixel convention.
pub fn upsample_bilinear(p: &ProbabilityMatrix, out_h: usize, out_w: usize) -> Result<ProbabilityMatrix> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::ZeroTargetSize);
    }
    let rows = half_pixel_taps(out_h, p.height());
    let cols = half_pixel_taps(out_w, p.width());
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(r0, r1, fy) in &rows {
        for &(c0, c1, fx) in &cols {
            let top = p.get(r0, c0) * (1.0 - fx) + p.get(r0, c1) * fx;
            let bottom = p.get(r1, c0) * (1.0 - fx) + p.get(r1, c1) * fx;
            // convex combination; clamp only absorbs rounding
            out.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0));
        }
    }
    ProbabilityMatrix::new(out_h, out_w, out)
}

/// Nearest-neighbour mask resampling: output cell `(i, j)` copies source
/// cell `(i * h / out_h, j * w / out_w)`.
pub fn upsample_nearest_mask(m: &BinaryMask, out_h: usize, out_w: usize) -> Result<BinaryMask> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::ZeroTargetSize);
    }
    if out_h < m.height() || out_w < m.width() {
        return Err(Error::InvalidDims(format!(
            "nearest upsampling cannot shrink {}x{} to {out_h}x{out_w}",
            m.height(),
            m.width()
        )));
    }
    let mut data = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let si = i * m.height() / out_h;
        for j in 0..out_w {
            data.push(m.get(si, j * m.width() / out_w));
        }
    }
    BinaryMask::new(out_h, out_w, data)
}

pub fn l2_distance(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch { expected: a.dim(), found: b.dim() });
    }
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::LayerTag;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_maps(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> FeatureMaps {
        let data = (0..h * w * c).map(|_| rng.random_range(-2.0f32..2.0)).collect();
        FeatureMaps::new(h, w, c, data, LayerTag::Pool5).unwrap()
    }

    #[test]
    fn full_mask_is_plain_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let maps = random_maps(&mut rng, 3, 5, 4);
        let v = masked_gap(&maps, &BinaryMask::filled(3, 5, true)).unwrap();
        for k in 0..4 {
            let mean: f64 = (0..15).map(|p| maps.position(p)[k] as f64).sum::<f64>() / 15.0;
            assert!((v.0[k] - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn single_support_returns_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let maps = random_maps(&mut rng, 4, 4, 8);
        let mut mask = BinaryMask::filled(4, 4, false);
        mask.set(2, 1, true);
        let v = masked_gap(&maps, &mask).unwrap();
        let expected: Vec<f64> = maps.at(2, 1).iter().map(|&x| x as f64).collect();
        assert_eq!(v.0, expected);
    }

    #[test]
    fn masked_gap_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let maps = random_maps(&mut rng, 4, 4, 8);
            let mut bits: Vec<bool> = (0..16).map(|_| rng.random_bool(0.4)).collect();
            bits[rng.random_range(0..16)] = true;
            let mask = BinaryMask::new(4, 4, bits).unwrap();
            let got = masked_gap(&maps, &mask).unwrap();
            for k in 0..8 {
                let (mut sum, mut cnt) = (0.0f64, 0.0f64);
                for i in 0..4 {
                    for j in 0..4 {
                        if mask.get(i, j) {
                            sum += maps.at(i, j)[k] as f64;
                            cnt += 1.0;
                        }
                    }
                }
                assert!((got.0[k] - sum / cnt).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn masked_gap_errors() {
        let maps = FeatureMaps::new(2, 2, 1, vec![1.0; 4], LayerTag::Pool5).unwrap();
        assert!(matches!(masked_gap(&maps, &BinaryMask::filled(2, 2, false)), Err(Error::EmptyMask)));
        assert!(matches!(masked_gap(&maps, &BinaryMask::filled(3, 2, true)), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn concat_cases() {
        let a = FeatureVector(vec![1.0, 2.0]);
        let b = FeatureVector(vec![3.0]);
        assert_eq!(concat(&[a.clone(), b]).unwrap().0, vec![1.0, 2.0, 3.0]);
        assert_eq!(concat(std::slice::from_ref(&a)).unwrap(), a);
        let three = vec![FeatureVector::zeros(512); 3];
        assert_eq!(concat(&three).unwrap().dim(), 1536);
        assert!(matches!(concat(&[]), Err(Error::EmptyList)));
    }

    #[test]
    fn bilinear_constant_and_identity() {
        let p = ProbabilityMatrix::constant(3, 4, 0.4).unwrap();
        let up = upsample_bilinear(&p, 17, 9).unwrap();
        assert!(up.data().iter().all(|&v| (v - 0.4).abs() < 1e-15));

        let q = ProbabilityMatrix::new(2, 2, vec![0.1, 0.9, 0.3, 0.0]).unwrap();
        assert_eq!(upsample_bilinear(&q, 2, 2).unwrap(), q);
        assert!(matches!(upsample_bilinear(&q, 0, 2), Err(Error::ZeroTargetSize)));
    }

    #[test]
    fn bilinear_one_by_two_half_pixel() {
        // samples land at -0.25, 0.25, 0.75, 1.25 in source space
        let p = ProbabilityMatrix::new(1, 2, vec![0.0, 1.0]).unwrap();
        let up = upsample_bilinear(&p, 1, 4).unwrap();
        assert_eq!(up.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn nearest_mask_cases() {
        let one = BinaryMask::filled(1, 1, true);
        assert_eq!(upsample_nearest_mask(&one, 2, 2).unwrap(), BinaryMask::filled(2, 2, true));

        let checker = BinaryMask::new(2, 2, vec![true, false, false, true]).unwrap();
        assert_eq!(upsample_nearest_mask(&checker, 2, 2).unwrap(), checker);
        let up = upsample_nearest_mask(&checker, 4, 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(up.get(i, j), checker.get(i / 2, j / 2));
            }
        }
        assert!(matches!(upsample_nearest_mask(&checker, 0, 4), Err(Error::ZeroTargetSize)));
    }

    #[test]
    fn l2_cases() {
        let a = FeatureVector(vec![0.0, 0.0]);
        let b = FeatureVector(vec![3.0, 4.0]);
        assert_eq!(l2_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(l2_distance(&a, &b).unwrap(), 5.0);
        assert!(matches!(l2_distance(&a, &FeatureVector(vec![1.0])), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn l2_symmetry_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let a = FeatureVector((0..6).map(|_| rng.random_range(-5.0..5.0)).collect());
            let b = FeatureVector((0..6).map(|_| rng.random_range(-5.0..5.0)).collect());
            assert_eq!(l2_distance(&a, &b).unwrap(), l2_distance(&b, &a).unwrap());
        }
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-100.0f64..100.0, n)
    }

    proptest! {
        #[test]
        fn l2_triangle(a in vec_strategy(5), b in vec_strategy(5), c in vec_strategy(5)) {
            let (a, b, c) = (FeatureVector(a), FeatureVector(b), FeatureVector(c));
            let ab = l2_distance(&a, &b).unwrap();
            let bc = l2_distance(&b, &c).unwrap();
            let ac = l2_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-9);
        }

        #[test]
        fn bilinear_stays_in_input_range(
            h in 1usize..5, w in 1usize..5, oh in 1usize..12, ow in 1usize..12,
            vals in proptest::collection::vec(0.0f64..=1.0, 25),
        ) {
            let p = ProbabilityMatrix::new(h, w, vals[..h * w].to_vec()).unwrap();
            let lo = p.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = p.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let up = upsample_bilinear(&p, oh, ow).unwrap();
            prop_assert!(up.data().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        }
    }
}
