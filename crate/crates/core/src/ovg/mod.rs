//! Viewpoint handling: the sticker/light viewpoint feature, unsupervised
//! front/back discriminators, and the generator that predicts the embedding
//! of the unseen opposite view.

mod generator;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans, spectral_cluster, SpectralConfig};
use crate::error::{Error, Result};
use crate::par;
use crate::prototype::{intersect_masks, localize, manifest_hash, PrototypeBank, Semantic, SemanticPrototype};
use crate::tensor_io::{
    concat, masked_gap, upsample_nearest_mask, FeatureMaps, FeatureVector, LayerTag, Manifest, Viewpoint,
};

pub use generator::{
    embed, embed_record, extract_real_orthogonal, generate_orthogonal, train_generator, train_generator_indexed,
    EmbedSource, GeneratorConfig, GeneratorTraining, OvgModel, TargetMode, ViewIndex,
};

/// Sticker then light block of the viewpoint feature, with absence flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewpointFeature {
    pub vector: FeatureVector,
    pub absent: Vec<bool>,
}

/// Sticker and light prototypes of the pool4 and pool5 banks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewpointPrototypes {
    pub pool4: Vec<SemanticPrototype>,
    pub pool5: Vec<SemanticPrototype>,
}

impl ViewpointPrototypes {
    pub fn from_banks(bank4: &PrototypeBank, bank5: &PrototypeBank) -> Result<Self> {
        for (bank, layer) in [(bank4, LayerTag::Pool4), (bank5, LayerTag::Pool5)] {
            if bank.layer != layer {
                return Err(Error::LayerMismatch { expected: layer.to_string(), found: bank.layer.to_string() });
            }
        }
        let pick = |b: &PrototypeBank| -> Result<Vec<SemanticPrototype>> {
            Semantic::VIEWPOINT.iter().map(|&s| b.require(s).cloned()).collect()
        };
        Ok(Self { pool4: pick(bank4)?, pool5: pick(bank5)? })
    }

    fn check(&self) -> Result<()> {
        for (set, layer) in [(&self.pool4, LayerTag::Pool4), (&self.pool5, LayerTag::Pool5)] {
            if set.len() != Semantic::VIEWPOINT.len() {
                return Err(Error::MissingPrototype(format!("{layer} sticker/light prototypes")));
            }
            for (p, s) in set.iter().zip(Semantic::VIEWPOINT) {
                if p.semantic != s {
                    return Err(Error::MissingPrototype(format!("{layer} {s}")));
                }
                if p.layer != layer {
                    return Err(Error::LayerMismatch { expected: layer.to_string(), found: p.layer.to_string() });
                }
            }
        }
        Ok(())
    }

    /// Per region: pool4 and pool5 masks, the pool5 one upsampled (nearest) to
    /// the pool4 grid, intersected, then average-pooled over pool4.
    pub fn feature(&self, maps4: &FeatureMaps, maps5: &FeatureMaps) -> Result<ViewpointFeature> {
        self.check()?;
        for (m, layer) in [(maps4, LayerTag::Pool4), (maps5, LayerTag::Pool5)] {
            if m.layer() != layer {
                return Err(Error::LayerMismatch { expected: layer.to_string(), found: m.layer().to_string() });
            }
        }
        let mut blocks = Vec::with_capacity(2);
        let mut absent = Vec::with_capacity(2);
        for (p4, p5) in self.pool4.iter().zip(&self.pool5) {
            let l4 = localize(maps4, p4)?;
            let l5 = upsample_nearest_mask(&localize(maps5, p5)?, maps4.height(), maps4.width())?;
            let inter = intersect_masks(&l4, &l5)?;
            if inter.is_empty() {
                blocks.push(FeatureVector::zeros(maps4.channels()));
                absent.push(true);
            } else {
                blocks.push(masked_gap(maps4, &inter)?);
                absent.push(false);
            }
        }
        Ok(ViewpointFeature { vector: concat(&blocks)?, absent })
    }

    /// Viewpoint features of every record, in record order.
    pub fn features(&self, manifest: &Manifest) -> Result<Vec<ViewpointFeature>> {
        par::try_map_slice(&manifest.records, |r| {
            let m4 = manifest.load_layer(r, LayerTag::Pool4)?;
            let m5 = manifest.load_layer(r, LayerTag::Pool5)?;
            self.feature(&m4, &m5)
        })
    }
}

pub fn viewpoint_feature(
    maps4: &FeatureMaps,
    maps5: &FeatureMaps,
    bank4: &PrototypeBank,
    bank5: &PrototypeBank,
) -> Result<ViewpointFeature> {
    ViewpointPrototypes::from_banks(bank4, bank5)?.feature(maps4, maps5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewClustering {
    KMeans,
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub seed: u64,
    pub algorithm: ViewClustering,
    /// Minimum relative gap `(|s_front| - |s_back|) / |s_front|` between the
    /// sticker-block norms of the two centers.
    pub min_sticker_contrast: f64,
    pub max_iter: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { seed: 0, algorithm: ViewClustering::KMeans, min_sticker_contrast: 0.5, max_iter: 300 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorProvenance {
    pub seed: u64,
    pub subset_hash: String,
    pub subset_size: usize,
    pub algorithm: ViewClustering,
    pub labeling_rule: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewpointDiscriminators {
    pub front_center: FeatureVector,
    pub back_center: FeatureVector,
    /// Prototypes used to compute viewpoint features, so the file is
    /// self-contained for classification.
    pub prototypes: ViewpointPrototypes,
    pub provenance: DiscriminatorProvenance,
}

const LABELING_RULE: &str = "front = cluster whose center has the larger sticker-block norm";

impl ViewpointDiscriminators {
    pub fn dim(&self) -> usize {
        self.front_center.dim()
    }

    pub fn classify(&self, f_v: &FeatureVector) -> Result<Viewpoint> {
        classify_viewpoint(f_v, self)
    }

    pub fn classify_maps(&self, maps4: &FeatureMaps, maps5: &FeatureMaps) -> Result<Viewpoint> {
        self.classify(&self.prototypes.feature(maps4, maps5)?.vector)
    }

    /// Predicted viewpoint of every record, in record order.
    pub fn classify_manifest(&self, manifest: &Manifest) -> Result<Vec<Viewpoint>> {
        self.prototypes.features(manifest)?.iter().map(|f| self.classify(&f.vector)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let d: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        if d.front_center.dim() != d.back_center.dim() {
            return Err(Error::DimMismatch { expected: d.front_center.dim(), found: d.back_center.dim() });
        }
        d.prototypes.check()?;
        Ok(d)
    }
}

/// Nearest center by Euclidean distance; exact ties go to back.
pub fn classify_viewpoint(f_v: &FeatureVector, disc: &ViewpointDiscriminators) -> Result<Viewpoint> {
    if f_v.dim() != disc.dim() {
        return Err(Error::DimMismatch { expected: disc.dim(), found: f_v.dim() });
    }
    let sq = |c: &FeatureVector| f_v.0.iter().zip(&c.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    Ok(if sq(&disc.front_center) < sq(&disc.back_center) { Viewpoint::Front } else { Viewpoint::Back })
}

/// Cluster precomputed viewpoint features into two groups and name them.
pub fn discriminators_from_features(
    features: &[FeatureVector],
    prototypes: ViewpointPrototypes,
    cfg: &DiscriminatorConfig,
    subset_hash: String,
) -> Result<ViewpointDiscriminators> {
    let clusters = match cfg.algorithm {
        ViewClustering::KMeans => kmeans(features, 2, cfg.seed, cfg.max_iter)?,
        ViewClustering::Spectral => spectral_cluster(features, &SpectralConfig::new(2, cfg.seed))?.clusters,
    };
    let half = features[0].dim() / 2;
    let sticker_norm = |c: &FeatureVector| c.0[..half].iter().map(|v| v * v).sum::<f64>().sqrt();
    let (a, b) = (&clusters.centers[0], &clusters.centers[1]);
    let (front, back) = if sticker_norm(a) > sticker_norm(b) { (a, b) } else { (b, a) };
    let (nf, nb) = (sticker_norm(front), sticker_norm(back));
    let gap: f64 = front.0.iter().zip(&back.0).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    if gap <= 1e-9 * front.norm().max(1.0) {
        return Err(Error::DegenerateClusters("the two viewpoint centers coincide".into()));
    }
    if !(nf > 0.0) || (nf - nb) / nf < cfg.min_sticker_contrast {
        return Err(Error::DegenerateClusters(format!(
            "sticker evidence does not separate the clusters (norms {nf:.4} vs {nb:.4})"
        )));
    }
    Ok(ViewpointDiscriminators {
        front_center: front.clone(),
        back_center: back.clone(),
        prototypes,
        provenance: DiscriminatorProvenance {
            seed: cfg.seed,
            subset_hash,
            subset_size: features.len(),
            algorithm: cfg.algorithm,
            labeling_rule: LABELING_RULE.into(),
        },
    })
}

/// Compute viewpoint features over `manifest`, split them into two clusters,
/// and label the sticker-rich one front.
pub fn build_discriminators(
    manifest: &Manifest,
    bank4: &PrototypeBank,
    bank5: &PrototypeBank,
    cfg: &DiscriminatorConfig,
) -> Result<ViewpointDiscriminators> {
    let prototypes = ViewpointPrototypes::from_banks(bank4, bank5)?;
    let features: Vec<FeatureVector> = prototypes.features(manifest)?.into_iter().map(|f| f.vector).collect();
    discriminators_from_features(&features, prototypes, cfg, manifest_hash(manifest)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prototype::Provenance;
    use crate::tensor_io::BinaryMask;

    fn proto(v: Vec<f64>, layer: LayerTag, s: Semantic) -> SemanticPrototype {
        SemanticPrototype::new(FeatureVector(v), layer, s).unwrap()
    }

    fn bank(layer: LayerTag) -> PrototypeBank {
        PrototypeBank {
            layer,
            prototypes: vec![
                proto(vec![1.0, 0.0, 0.0], layer, Semantic::Sticker),
                proto(vec![0.0, 1.0, 0.0], layer, Semantic::Light),
                proto(vec![0.0, 0.0, 1.0], layer, Semantic::Background),
            ],
            provenance: Provenance { manifest_hash: String::new(), sample_size: 0, seed: 0, gamma: 1.0 },
        }
    }

    /// Grid with channel-0 (sticker) cells and channel-1 (light) cells.
    fn grid(h: usize, w: usize, layer: LayerTag, sticker: &[(usize, usize)], light: &[(usize, usize)]) -> FeatureMaps {
        let mut data = vec![0.0f32; h * w * 3];
        for i in 0..h {
            for j in 0..w {
                let p = (i * w + j) * 3;
                if sticker.contains(&(i, j)) {
                    data[p] = 2.0 + (i + j) as f32;
                } else if light.contains(&(i, j)) {
                    data[p + 1] = 1.5;
                } else {
                    data[p + 2] = 1.0;
                }
            }
        }
        FeatureMaps::new(h, w, 3, data, layer).unwrap()
    }

    #[test]
    fn feature_pools_the_cross_layer_intersection() {
        // pool5 sticker at (0,0) covers pool4 (0..2, 0..2); pool4 marks only (0,0) and (1,1) and (3,3)
        let m5 = grid(2, 2, LayerTag::Pool5, &[(0, 0)], &[(1, 1)]);
        let m4 = grid(4, 4, LayerTag::Pool4, &[(0, 0), (1, 1), (3, 3)], &[(2, 2), (3, 2)]);
        let f = viewpoint_feature(&m4, &m5, &bank(LayerTag::Pool4), &bank(LayerTag::Pool5)).unwrap();
        assert_eq!(f.vector.dim(), 6);
        assert_eq!(f.absent, vec![false, false]);
        let mut inter = BinaryMask::filled(4, 4, false);
        inter.set(0, 0, true);
        inter.set(1, 1, true);
        assert_eq!(&f.vector.0[..3], masked_gap(&m4, &inter).unwrap().as_slice());
        let mut light = BinaryMask::filled(4, 4, false);
        light.set(2, 2, true);
        light.set(3, 2, true);
        assert_eq!(&f.vector.0[3..], masked_gap(&m4, &light).unwrap().as_slice());
    }

    #[test]
    fn absent_regions_give_zero_blocks() {
        let m5 = grid(2, 2, LayerTag::Pool5, &[], &[(0, 1)]);
        let m4 = grid(4, 4, LayerTag::Pool4, &[], &[(0, 2)]);
        let f = viewpoint_feature(&m4, &m5, &bank(LayerTag::Pool4), &bank(LayerTag::Pool5)).unwrap();
        assert_eq!(f.absent, vec![true, false]);
        assert!(f.vector.0[..3].iter().all(|&v| v == 0.0));
        assert!(f.vector.0[3..].iter().any(|&v| v != 0.0));

        let none5 = grid(2, 2, LayerTag::Pool5, &[], &[]);
        let none4 = grid(4, 4, LayerTag::Pool4, &[], &[]);
        let f = viewpoint_feature(&none4, &none5, &bank(LayerTag::Pool4), &bank(LayerTag::Pool5)).unwrap();
        assert_eq!(f.absent, vec![true, true]);
        assert!(f.vector.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bank_checks() {
        let m5 = grid(2, 2, LayerTag::Pool5, &[], &[]);
        let m4 = grid(4, 4, LayerTag::Pool4, &[], &[]);
        assert!(matches!(
            viewpoint_feature(&m4, &m5, &bank(LayerTag::Pool5), &bank(LayerTag::Pool5)),
            Err(Error::LayerMismatch { .. })
        ));
        let mut b = bank(LayerTag::Pool4);
        b.prototypes.remove(1);
        assert!(matches!(viewpoint_feature(&m4, &m5, &b, &bank(LayerTag::Pool5)), Err(Error::MissingPrototype(_))));
    }

    fn disc(front: Vec<f64>, back: Vec<f64>) -> ViewpointDiscriminators {
        ViewpointDiscriminators {
            front_center: FeatureVector(front),
            back_center: FeatureVector(back),
            prototypes: ViewpointPrototypes::from_banks(&bank(LayerTag::Pool4), &bank(LayerTag::Pool5)).unwrap(),
            provenance: DiscriminatorProvenance {
                seed: 0,
                subset_hash: String::new(),
                subset_size: 0,
                algorithm: ViewClustering::KMeans,
                labeling_rule: LABELING_RULE.into(),
            },
        }
    }

    #[test]
    fn classification_rules() {
        let d = disc(vec![1.0, 1.0], vec![0.0, 1.0]);
        assert_eq!(classify_viewpoint(&d.front_center, &d).unwrap(), Viewpoint::Front);
        assert_eq!(classify_viewpoint(&d.back_center, &d).unwrap(), Viewpoint::Back);
        // equidistant point goes to back
        assert_eq!(classify_viewpoint(&FeatureVector(vec![0.5, 1.0]), &d).unwrap(), Viewpoint::Back);
        assert!(matches!(classify_viewpoint(&FeatureVector(vec![1.0]), &d), Err(Error::DimMismatch { .. })));
        for alpha in [0.01, 0.5, 7.0, 1e4] {
            let x = FeatureVector(vec![0.7, 0.2]);
            let scaled = disc(d.front_center.scaled(alpha).0, d.back_center.scaled(alpha).0);
            assert_eq!(classify_viewpoint(&x.scaled(alpha), &scaled).unwrap(), classify_viewpoint(&x, &d).unwrap());
        }
    }

    #[test]
    fn discriminators_label_the_sticker_rich_cluster_front() {
        let protos = ViewpointPrototypes::from_banks(&bank(LayerTag::Pool4), &bank(LayerTag::Pool5)).unwrap();
        let mut feats = Vec::new();
        for i in 0..10 {
            let e = i as f64 * 0.01;
            feats.push(FeatureVector(vec![0.0, 0.0, 0.0, 0.1 + e, 1.0, 0.0]));
            feats.push(FeatureVector(vec![1.0 + e, 0.0, 0.0, 0.1, 1.0 - e, 0.0]));
        }
        let d =
            discriminators_from_features(&feats, protos.clone(), &DiscriminatorConfig::default(), "h".into()).unwrap();
        assert!(d.front_center.0[0] > 0.9);
        assert!(d.back_center.0[0].abs() < 1e-12);
        for (i, f) in feats.iter().enumerate() {
            let expect = if i % 2 == 1 { Viewpoint::Front } else { Viewpoint::Back };
            assert_eq!(d.classify(f).unwrap(), expect);
        }

        let same = vec![FeatureVector(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]); 6];
        assert!(matches!(
            discriminators_from_features(&same, protos.clone(), &DiscriminatorConfig::default(), String::new()),
            Err(Error::DegenerateClusters(_))
        ));
        // only sticker-bearing features: clusters split on noise, no sticker contrast
        let fronts: Vec<FeatureVector> =
            (0..10).map(|i| FeatureVector(vec![1.0 + 0.01 * i as f64, 0.0, 0.0, 0.0, 1.0, 0.0])).collect();
        assert!(matches!(
            discriminators_from_features(&fronts, protos, &DiscriminatorConfig::default(), String::new()),
            Err(Error::DegenerateClusters(_))
        ));
    }

    #[test]
    fn discriminator_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = disc(vec![1.0, 2.0], vec![0.0, 2.0]);
        let p = dir.path().join("disc.json");
        d.save(&p).unwrap();
        assert_eq!(ViewpointDiscriminators::load(&p).unwrap(), d);
    }
}
