//! Discriminative-region features: masked pooling over the sticker, light and
//! grille regions of pool5, a fusion network on top, and its training loop.

mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{load_checkpoint, save_checkpoint, CheckpointHeader, MlpParams, NetworkEntry};
use crate::prototype::{localize, PrototypeBank, Semantic, SemanticPrototype};
use crate::tensor_io::{concat, masked_gap, FeatureMaps, FeatureVector, LayerTag};

pub use train::{train_fusion, EpochLoss, FusionConfig, FusionTraining};

/// Pooled region features before fusion, with a flag per region whose mask
/// came out empty (its block is then all zeros).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionFeatures {
    pub vector: FeatureVector,
    pub absent: Vec<bool>,
}

/// The sticker, light and grille prototypes of a pool5 bank, in block order.
pub fn discriminative_prototypes(bank: &PrototypeBank) -> Result<Vec<SemanticPrototype>> {
    if bank.layer != LayerTag::Pool5 {
        return Err(Error::LayerMismatch { expected: LayerTag::Pool5.to_string(), found: bank.layer.to_string() });
    }
    Semantic::DISCRIMINATIVE.iter().map(|&s| bank.require(s).cloned()).collect()
}

fn check_prototypes(prototypes: &[SemanticPrototype]) -> Result<()> {
    if prototypes.len() != Semantic::DISCRIMINATIVE.len() {
        return Err(Error::MissingPrototype(format!(
            "expected {} discriminative prototypes, got {}",
            Semantic::DISCRIMINATIVE.len(),
            prototypes.len()
        )));
    }
    for (p, s) in prototypes.iter().zip(Semantic::DISCRIMINATIVE) {
        if p.semantic != s {
            return Err(Error::MissingPrototype(format!("{s} (found {} in its slot)", p.semantic)));
        }
    }
    Ok(())
}

/// Mask each discriminative region on pool5, average-pool inside it, and
/// concatenate the blocks in sticker, light, grille order.
pub fn extract_discriminative(maps5: &FeatureMaps, prototypes: &[SemanticPrototype]) -> Result<RegionFeatures> {
    check_prototypes(prototypes)?;
    if maps5.layer() != LayerTag::Pool5 {
        return Err(Error::LayerMismatch { expected: LayerTag::Pool5.to_string(), found: maps5.layer().to_string() });
    }
    let mut blocks = Vec::with_capacity(prototypes.len());
    let mut absent = Vec::with_capacity(prototypes.len());
    for p in prototypes {
        let mask = localize(maps5, p)?;
        if mask.is_empty() {
            blocks.push(FeatureVector::zeros(maps5.channels()));
            absent.push(true);
        } else {
            blocks.push(masked_gap(maps5, &mask)?);
            absent.push(false);
        }
    }
    Ok(RegionFeatures { vector: concat(&blocks)?, absent })
}

#[derive(Debug, Clone)]
pub struct DraModel {
    pub fusion: MlpParams,
    /// Linear classifier over `f_d`, used only by the training loss.
    pub head: MlpParams,
    pub prototypes: Vec<SemanticPrototype>,
    /// Vehicle id of each classifier output.
    pub classes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct DraExtra {
    prototypes: Vec<SemanticPrototype>,
    classes: Vec<String>,
}

pub const DRA_KIND: &str = "dra";

impl DraModel {
    /// Eval-mode fusion of a pre-fusion vector into `f_d`.
    pub fn fuse(&self, pre_fusion: &FeatureVector) -> Result<FeatureVector> {
        self.fusion.forward_vector(pre_fusion)
    }

    /// `f_d` of one image together with its region absence flags.
    pub fn describe(&self, maps5: &FeatureMaps) -> Result<(FeatureVector, Vec<bool>)> {
        let r = extract_discriminative(maps5, &self.prototypes)?;
        Ok((self.fuse(&r.vector)?, r.absent))
    }

    pub fn save(&self, path: &Path, epoch: usize, seed: u64) -> Result<()> {
        let header = CheckpointHeader {
            kind: DRA_KIND.into(),
            epoch,
            seed,
            networks: vec![
                NetworkEntry { name: "fusion".into(), config: self.fusion.config().clone() },
                NetworkEntry { name: "head".into(), config: self.head.config().clone() },
            ],
            extra: serde_json::to_value(DraExtra {
                prototypes: self.prototypes.clone(),
                classes: self.classes.clone(),
            })?,
        };
        save_checkpoint(path, &header, &[&self.fusion, &self.head])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(path)?;
        if ckpt.header.kind != DRA_KIND {
            return Err(Error::Malformed {
                what: path.display().to_string(),
                detail: format!("expected a {DRA_KIND} checkpoint, found {:?}", ckpt.header.kind),
            });
        }
        let extra: DraExtra = serde_json::from_value(ckpt.header.extra.clone())?;
        check_prototypes(&extra.prototypes)?;
        Ok(Self {
            fusion: ckpt.network("fusion")?.clone(),
            head: ckpt.network("head")?.clone(),
            prototypes: extra.prototypes,
            classes: extra.classes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpConfig;
    use crate::prototype::Provenance;
    use crate::tensor_io::BinaryMask;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Three orthogonal prototypes on channels 0, 1, 2 of a 4-channel grid.
    fn protos() -> Vec<SemanticPrototype> {
        Semantic::DISCRIMINATIVE
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let mut v = vec![0.0; 4];
                v[i] = 1.0;
                SemanticPrototype::new(FeatureVector(v), LayerTag::Pool5, s).unwrap()
            })
            .collect()
    }

    /// 3x3 grid: row 0 sticker, row 1 light, row 2 filler on channel 3.
    fn planted(with_sticker: bool) -> FeatureMaps {
        let mut data = Vec::new();
        for i in 0..3 {
            for j in 0..3 {
                let mut x = [0.0f32; 4];
                match i {
                    0 if with_sticker => x[0] = 1.0 + j as f32,
                    1 => x[1] = 2.0 + j as f32,
                    _ => x[3] = 5.0,
                }
                // small off-axis component that stays orthogonal to the other prototypes
                x[3] += 0.25;
                data.extend_from_slice(&x);
            }
        }
        FeatureMaps::new(3, 3, 4, data, LayerTag::Pool5).unwrap()
    }

    #[test]
    fn blocks_are_masked_means_and_absence_is_flagged() {
        let maps = planted(true);
        let r = extract_discriminative(&maps, &protos()).unwrap();
        assert_eq!(r.vector.dim(), 12);
        assert_eq!(r.absent, vec![false, false, true]);
        let sticker = masked_gap(&maps, &BinaryMask::rect(3, 3, (0, 1), (0, 3))).unwrap();
        let light = masked_gap(&maps, &BinaryMask::rect(3, 3, (1, 2), (0, 3))).unwrap();
        assert_eq!(&r.vector.0[0..4], sticker.as_slice());
        assert_eq!(&r.vector.0[4..8], light.as_slice());
        assert!(r.vector.0[8..].iter().all(|&v| v == 0.0));

        let back = extract_discriminative(&planted(false), &protos()).unwrap();
        assert_eq!(back.absent, vec![true, false, true]);
        assert!(back.vector.0[0..4].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prototype_scaling_and_outside_perturbation_do_not_matter() {
        let maps = planted(true);
        let base = extract_discriminative(&maps, &protos()).unwrap();
        let mut scaled = protos();
        for (p, b) in scaled.iter_mut().zip([0.1, 3.0, 42.0]) {
            p.vector = p.vector.scaled(b);
        }
        assert_eq!(extract_discriminative(&maps, &scaled).unwrap(), base);

        // change the filler row (outside every mask) without touching channels 0..3 signs
        let mut data = maps.data().to_vec();
        for j in 0..3 {
            data[(6 + j) * 4 + 3] = 123.0;
        }
        let moved = FeatureMaps::new(3, 3, 4, data, LayerTag::Pool5).unwrap();
        assert_eq!(extract_discriminative(&moved, &protos()).unwrap(), base);
    }

    #[test]
    fn prototype_and_layer_checks() {
        let maps = planted(true);
        let mut wrong = protos();
        wrong.swap(0, 1);
        assert!(matches!(extract_discriminative(&maps, &wrong), Err(Error::MissingPrototype(_))));
        assert!(matches!(extract_discriminative(&maps, &protos()[..2]), Err(Error::MissingPrototype(_))));
        let p4 = FeatureMaps::new(3, 3, 4, maps.data().to_vec(), LayerTag::Pool4).unwrap();
        assert!(matches!(extract_discriminative(&p4, &protos()), Err(Error::LayerMismatch { .. })));
        let bank = PrototypeBank {
            layer: LayerTag::Pool5,
            prototypes: protos()[..2].to_vec(),
            provenance: Provenance { manifest_hash: String::new(), sample_size: 0, seed: 0, gamma: 1.0 },
        };
        assert!(matches!(discriminative_prototypes(&bank), Err(Error::MissingPrototype(_))));
    }

    fn model(fusion: MlpParams) -> DraModel {
        let head = MlpParams::init(&MlpConfig::new(vec![fusion.config().output_dim(), 3], false).unwrap(), 1).unwrap();
        DraModel { fusion, head, prototypes: protos(), classes: vec!["a".into(), "b".into(), "c".into()] }
    }

    #[test]
    fn fuse_is_the_eval_forward() {
        let cfg = MlpConfig::new(vec![12, 16, 8, 5], true).unwrap();
        let m = model(MlpParams::init(&cfg, 4).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = FeatureVector((0..12).map(|_| rng.random_range(-1.0..1.0)).collect());
        let a = m.fuse(&x).unwrap();
        assert_eq!(a, m.fuse(&x).unwrap());
        assert_eq!(a, m.fusion.forward_vector(&x).unwrap());
        assert_eq!(a.dim(), 5);
        let zero = model(MlpParams::zeros(&cfg).unwrap());
        assert!(zero.fuse(&x).unwrap().0.iter().all(|&v| v == 0.0));
        assert!(matches!(m.fuse(&FeatureVector::zeros(11)), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = MlpConfig::new(vec![12, 6, 4], true).unwrap();
        let m = model(MlpParams::init(&cfg, 9).unwrap());
        let path = dir.path().join("dra.ckpt");
        m.save(&path, 3, 9).unwrap();
        let back = DraModel::load(&path).unwrap();
        assert_eq!(back.prototypes, m.prototypes);
        assert_eq!(back.classes, m.classes);
        let x = FeatureVector(vec![0.5; 12]);
        let (a, b) = (m.fuse(&x).unwrap(), back.fuse(&x).unwrap());
        for (u, v) in a.0.iter().zip(&b.0) {
            assert!((u - v).abs() < 1e-5);
        }
    }
}
