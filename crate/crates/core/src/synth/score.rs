use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{planted_in, Corpus};
use crate::error::{Error, Result};
use crate::ovg::ViewpointDiscriminators;
use crate::par;
use crate::prototype::{localize, PrototypeBank, Semantic};
use crate::tensor_io::{read_mask_pgm, BinaryMask, LayerTag, Manifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub layer: LayerTag,
    /// Mean IoU per labeled semantic, over the images where it is planted.
    pub mean_iou: BTreeMap<Semantic, f64>,
    pub images: usize,
}

impl LocalizationReport {
    pub fn iou(&self, s: Semantic) -> Option<f64> {
        self.mean_iou.get(&s).copied()
    }
}

/// Mean IoU between each labeled prototype's indication mask and the planted
/// region, averaged over the images where that semantic is planted. Pool5
/// ground truth comes from the manifest's mask files, other layers from the
/// ground-truth layout.
pub fn score_localization(bank: &PrototypeBank, corpus: &Corpus) -> Result<LocalizationReport> {
    let manifest = &corpus.manifest;
    let layer_truth = corpus.truth.layer(bank.layer)?;
    let labeled: Vec<_> = bank.prototypes.iter().filter(|p| p.semantic != Semantic::Unlabeled).collect();
    if labeled.is_empty() {
        return Err(Error::MissingPrototype("no labeled prototypes to score".into()));
    }
    let per_image = par::try_map_slice(&manifest.records, |rec| {
        let view =
            rec.gt_viewpoint.ok_or_else(|| Error::MissingGroundTruth(format!("viewpoint of {}", rec.image_id)))?;
        let maps = manifest.load_layer(rec, bank.layer)?;
        let mut out = Vec::new();
        for p in &labeled {
            if !planted_in(p.semantic, view) {
                continue;
            }
            let truth: BinaryMask = if bank.layer == LayerTag::Pool5 {
                let rel = rec
                    .gt_masks
                    .as_ref()
                    .and_then(|m| m.get(p.semantic.as_str()))
                    .ok_or_else(|| Error::MissingGroundTruth(format!("{} mask of {}", p.semantic, rec.image_id)))?;
                read_mask_pgm(&manifest.resolve(rel))?
            } else {
                layer_truth.mask(p.semantic, view)
            };
            out.push((p.semantic, localize(&maps, p)?.iou(&truth)?));
        }
        Ok::<_, Error>(out)
    })?;
    let mut sums: BTreeMap<Semantic, (f64, usize)> = BTreeMap::new();
    for (s, iou) in per_image.into_iter().flatten() {
        let e = sums.entry(s).or_default();
        e.0 += iou;
        e.1 += 1;
    }
    Ok(LocalizationReport {
        layer: bank.layer,
        mean_iou: sums.into_iter().map(|(s, (t, n))| (s, t / n as f64)).collect(),
        images: manifest.len(),
    })
}

/// Fraction of records whose predicted viewpoint matches `gt_viewpoint`.
pub fn score_viewpoint(disc: &ViewpointDiscriminators, manifest: &Manifest) -> Result<f64> {
    let truth = manifest
        .records
        .iter()
        .map(|r| r.gt_viewpoint.ok_or_else(|| Error::MissingGroundTruth(format!("viewpoint of {}", r.image_id))))
        .collect::<Result<Vec<_>>>()?;
    let predicted = disc.classify_manifest(manifest)?;
    let hits = predicted.iter().zip(&truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / manifest.len() as f64)
}
