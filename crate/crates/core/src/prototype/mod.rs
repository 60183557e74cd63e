//! Semantic prototypes: cluster centers in activation space, their cosine
//! localization maps, and the bank file that stores them.

mod generate;
mod localize;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::{FeatureVector, LayerTag};

pub use generate::{
    auto_assign, build_feature_set, cluster_feature_set, generate_prototypes, label_prototypes, manifest_hash,
    sample_images, FeatureSetClustering,
};
pub use localize::{
    cosine_probability, indication_matrix, intersect_masks, localize, probability_matrix, render_heatmap,
};

/// Binarization threshold used for the sticker semantic; every other
/// semantic uses a strict `p > 0`.
pub const STICKER_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Semantic {
    Sticker,
    Light,
    Grille,
    Seat,
    Background,
    Unlabeled,
}

impl Semantic {
    /// The five labeled semantics in canonical order.
    pub const LABELED: [Semantic; 5] =
        [Semantic::Sticker, Semantic::Light, Semantic::Grille, Semantic::Seat, Semantic::Background];
    /// Regions pooled into the fused discriminative feature, in block order.
    pub const DISCRIMINATIVE: [Semantic; 3] = [Semantic::Sticker, Semantic::Light, Semantic::Grille];
    /// Regions pooled into the viewpoint feature, in block order.
    pub const VIEWPOINT: [Semantic; 2] = [Semantic::Sticker, Semantic::Light];

    pub fn as_str(self) -> &'static str {
        match self {
            Semantic::Sticker => "sticker",
            Semantic::Light => "light",
            Semantic::Grille => "grille",
            Semantic::Seat => "seat",
            Semantic::Background => "background",
            Semantic::Unlabeled => "unlabeled",
        }
    }

    pub fn default_threshold(self) -> f64 {
        match self {
            Semantic::Sticker => STICKER_THRESHOLD,
            _ => 0.0,
        }
    }
}

impl fmt::Display for Semantic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Semantic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sticker" => Ok(Semantic::Sticker),
            "light" => Ok(Semantic::Light),
            "grille" => Ok(Semantic::Grille),
            "seat" => Ok(Semantic::Seat),
            "background" => Ok(Semantic::Background),
            "unlabeled" => Ok(Semantic::Unlabeled),
            other => Err(Error::InvalidArgument(format!("unknown semantic '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticPrototype {
    pub vector: FeatureVector,
    pub layer: LayerTag,
    pub semantic: Semantic,
    pub threshold: f64,
}

impl SemanticPrototype {
    pub fn new(vector: FeatureVector, layer: LayerTag, semantic: Semantic) -> Result<Self> {
        let p = Self { vector, layer, semantic, threshold: semantic.default_threshold() };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.vector.is_finite() || !(self.vector.norm() > 0.0) {
            return Err(Error::Malformed {
                what: "prototype".into(),
                detail: "vector must be finite and nonzero".into(),
            });
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::BadThreshold(self.threshold));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub manifest_hash: String,
    pub sample_size: usize,
    pub seed: u64,
    pub gamma: f64,
}

/// Prototypes for a single layer. Index in `prototypes` is the cluster index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeBank {
    pub layer: LayerTag,
    pub prototypes: Vec<SemanticPrototype>,
    pub provenance: Provenance,
}

impl PrototypeBank {
    pub fn validate(&self) -> Result<()> {
        if self.prototypes.is_empty() {
            return Err(Error::EmptyList);
        }
        let dim = self.prototypes[0].vector.dim();
        let mut seen = BTreeSet::new();
        for p in &self.prototypes {
            p.validate()?;
            if p.layer != self.layer {
                return Err(Error::LayerMismatch { expected: self.layer.to_string(), found: p.layer.to_string() });
            }
            if p.vector.dim() != dim {
                return Err(Error::DimMismatch { expected: dim, found: p.vector.dim() });
            }
            if p.semantic != Semantic::Unlabeled && !seen.insert(p.semantic) {
                return Err(Error::DuplicateLabel(p.semantic.to_string()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.prototypes.first().map_or(0, |p| p.vector.dim())
    }

    pub fn get(&self, semantic: Semantic) -> Option<&SemanticPrototype> {
        self.prototypes.iter().find(|p| p.semantic == semantic)
    }

    pub fn require(&self, semantic: Semantic) -> Result<&SemanticPrototype> {
        self.get(semantic).ok_or_else(|| Error::MissingPrototype(format!("{semantic} in {} bank", self.layer)))
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
        let bank: PrototypeBank = serde_json::from_slice(&std::fs::read(path)?)?;
        bank.validate()?;
        Ok(bank)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn bank_of(vectors: &[(Semantic, Vec<f64>)], layer: LayerTag) -> PrototypeBank {
        PrototypeBank {
            layer,
            prototypes: vectors
                .iter()
                .map(|(s, v)| SemanticPrototype::new(FeatureVector(v.clone()), layer, *s).unwrap())
                .collect(),
            provenance: Provenance { manifest_hash: String::new(), sample_size: 0, seed: 0, gamma: 1.0 },
        }
    }

    #[test]
    fn thresholds_default_per_semantic() {
        assert_eq!(Semantic::Sticker.default_threshold(), 0.05);
        for s in [Semantic::Light, Semantic::Grille, Semantic::Seat, Semantic::Background, Semantic::Unlabeled] {
            assert_eq!(s.default_threshold(), 0.0);
        }
    }

    #[test]
    fn semantic_round_trips_through_strings() {
        for s in Semantic::LABELED.iter().chain([Semantic::Unlabeled].iter()) {
            assert_eq!(s.as_str().parse::<Semantic>().unwrap(), *s);
        }
        assert!("wheel".parse::<Semantic>().is_err());
    }

    #[test]
    fn bank_validation() {
        let ok = bank_of(&[(Semantic::Sticker, vec![1.0, 0.0]), (Semantic::Light, vec![0.0, 1.0])], LayerTag::Pool5);
        ok.validate().unwrap();
        let dup = bank_of(&[(Semantic::Light, vec![1.0, 0.0]), (Semantic::Light, vec![0.0, 1.0])], LayerTag::Pool5);
        assert!(matches!(dup.validate(), Err(Error::DuplicateLabel(_))));
        let two_unlabeled =
            bank_of(&[(Semantic::Unlabeled, vec![1.0, 0.0]), (Semantic::Unlabeled, vec![0.0, 1.0])], LayerTag::Pool4);
        two_unlabeled.validate().unwrap();
        assert!(SemanticPrototype::new(FeatureVector(vec![0.0, 0.0]), LayerTag::Pool5, Semantic::Seat).is_err());
        let mut bad = ok.clone();
        bad.prototypes[0].threshold = 1.0;
        assert!(matches!(bad.validate(), Err(Error::BadThreshold(_))));
        assert!(matches!(ok.require(Semantic::Grille), Err(Error::MissingPrototype(_))));
    }

    #[test]
    fn bank_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let bank =
            bank_of(&[(Semantic::Sticker, vec![0.25, -1.5]), (Semantic::Unlabeled, vec![3.0, 1.0])], LayerTag::Pool4);
        let path = dir.path().join("bank.json");
        bank.save(&path).unwrap();
        assert_eq!(PrototypeBank::load(&path).unwrap(), bank);
    }
}
