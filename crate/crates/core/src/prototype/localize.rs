use std::path::Path;

use super::SemanticPrototype;
use crate::error::{Error, Result};
use crate::tensor_io::{upsample_bilinear, write_probability_pgm, BinaryMask, FeatureMaps, ProbabilityMatrix};

/// `max(cos(d, x), 0)`, with zero vectors on either side mapping to 0.
pub fn cosine_probability(x: &[f64], d: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut nx = 0.0;
    let mut nd = 0.0;
    for (a, b) in x.iter().zip(d) {
        dot += a * b;
        nx += a * a;
        nd += b * b;
    }
    if nx == 0.0 || nd == 0.0 {
        return 0.0;
    }
    (dot / (nx.sqrt() * nd.sqrt())).clamp(0.0, 1.0)
}

/// Per-position occurrence probability of the prototype's semantic.
pub fn probability_matrix(maps: &FeatureMaps, proto: &SemanticPrototype) -> Result<ProbabilityMatrix> {
    if maps.layer() != proto.layer {
        return Err(Error::LayerMismatch { expected: proto.layer.to_string(), found: maps.layer().to_string() });
    }
    if maps.channels() != proto.vector.dim() {
        return Err(Error::DimMismatch { expected: proto.vector.dim(), found: maps.channels() });
    }
    let d = proto.vector.as_slice();
    let mut buf = vec![0.0f64; maps.channels()];
    let data = (0..maps.positions())
        .map(|p| {
            for (b, &v) in buf.iter_mut().zip(maps.position(p)) {
                *b = v as f64;
            }
            cosine_probability(&buf, d)
        })
        .collect();
    ProbabilityMatrix::new(maps.height(), maps.width(), data)
}

/// Entry is set iff `p > tau`.
pub fn indication_matrix(p: &ProbabilityMatrix, tau: f64) -> Result<BinaryMask> {
    if !(0.0..1.0).contains(&tau) {
        return Err(Error::BadThreshold(tau));
    }
    BinaryMask::new(p.height(), p.width(), p.data().iter().map(|&v| v > tau).collect())
}

/// Indication mask of `proto` on `maps` at the prototype's own threshold.
pub fn localize(maps: &FeatureMaps, proto: &SemanticPrototype) -> Result<BinaryMask> {
    indication_matrix(&probability_matrix(maps, proto)?, proto.threshold)
}

pub fn intersect_masks(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch { expected: a.shape(), found: b.shape() });
    }
    BinaryMask::new(a.height(), a.width(), a.data().iter().zip(b.data()).map(|(&x, &y)| x && y).collect())
}

/// Bilinear upsample to image size and write as an 8-bit PGM.
pub fn render_heatmap(p: &ProbabilityMatrix, img_h: usize, img_w: usize, out_path: &Path) -> Result<()> {
    let up = upsample_bilinear(p, img_h, img_w)?;
    write_probability_pgm(out_path, &up)
}
