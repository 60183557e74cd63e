//! Seeded generator of small feature-map corpora with planted part semantics,
//! vehicle identities and front/back viewpoints, plus scoring against the
//! planted ground truth.

mod generate;
mod score;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prototype::{PrototypeBank, Provenance, Semantic, SemanticPrototype};
use crate::tensor_io::{BinaryMask, FeatureVector, LayerTag, SplitTag, Viewpoint};

pub use generate::{gen_corpus, Corpus};
pub use score::{score_localization, score_viewpoint, LocalizationReport};

/// Side length of the grid the region layout is written in; other grid sizes
/// scale it proportionally.
pub const LAYOUT_BASE: usize = 7;

/// Manifest file names written into the corpus directory.
pub mod files {
    pub const MANIFEST: &str = "manifest.jsonl";
    pub const TRAIN: &str = "train.jsonl";
    pub const TEST: &str = "test.jsonl";
    pub const QUERY: &str = "query.jsonl";
    pub const GALLERY: &str = "gallery.jsonl";
    pub const QUERY_FRONT: &str = "query_front.jsonl";
    pub const GALLERY_BACK: &str = "gallery_back.jsonl";
    pub const GROUND_TRUTH: &str = "gt.json";
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridDims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_vehicles: usize,
    pub images_per_vehicle: usize,
    pub front_fraction: f64,
    pub pool4: GridDims,
    pub pool5: GridDims,
    /// Std-dev of the i.i.d. Gaussian added to every feature value.
    pub noise_sigma: f64,
    /// Norm scale of the per-vehicle perturbation in sticker/light/grille.
    pub identity_strength: f64,
    /// Dimension of the subspace the identity perturbations live in.
    pub identity_rank: usize,
    /// Norm of a per-image random vector added to every seat and background
    /// position. Zero disables it.
    pub distractor_strength: f64,
    /// Leading fraction of vehicles assigned to the train split.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_vehicles: 20,
            images_per_vehicle: 8,
            front_fraction: 0.5,
            pool4: GridDims { height: 14, width: 14, channels: 64 },
            pool5: GridDims { height: 7, width: 7, channels: 64 },
            noise_sigma: 0.05,
            identity_strength: 0.5,
            identity_rank: 8,
            distractor_strength: 0.0,
            train_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn grid(&self, layer: LayerTag) -> Result<GridDims> {
        match layer {
            LayerTag::Pool4 => Ok(self.pool4),
            LayerTag::Pool5 => Ok(self.pool5),
            LayerTag::Fc => Err(Error::InvalidArgument("synthetic corpora carry no fc layer".into())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_vehicles < 2 || self.images_per_vehicle < 1 {
            return bad("need at least 2 vehicles and 1 image per vehicle".into());
        }
        if !(self.front_fraction > 0.0 && self.front_fraction < 1.0) {
            return bad(format!("front_fraction {} outside (0, 1)", self.front_fraction));
        }
        if !(self.noise_sigma >= 0.0) || !(self.identity_strength > 0.0) || !(self.distractor_strength >= 0.0) {
            return bad("noise_sigma and distractor_strength must be >= 0, identity_strength > 0".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {} outside (0, 1)", self.train_fraction));
        }
        if self.identity_rank == 0 {
            return bad("identity_rank must be at least 1".into());
        }
        for layer in [LayerTag::Pool4, LayerTag::Pool5] {
            let g = self.grid(layer)?;
            if g.height < LAYOUT_BASE || g.width < LAYOUT_BASE {
                return Err(Error::RegionOverflow(format!(
                    "{layer} grid {}x{} is smaller than the {LAYOUT_BASE}x{LAYOUT_BASE} layout",
                    g.height, g.width
                )));
            }
            // signatures and identity basis must be mutually orthogonal
            if g.channels < Semantic::LABELED.len() + self.identity_rank + 1 {
                return bad(format!(
                    "{layer} needs at least {} channels for rank-{} identities",
                    Semantic::LABELED.len() + self.identity_rank + 1,
                    self.identity_rank
                ));
            }
        }
        Ok(())
    }
}

/// Half-open rectangle on a feature grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub rows: (usize, usize),
    pub cols: (usize, usize),
}

impl Rect {
    fn contains(&self, i: usize, j: usize) -> bool {
        (self.rows.0..self.rows.1).contains(&i) && (self.cols.0..self.cols.1).contains(&j)
    }
}

/// Fixed part layout on the base grid; background is everything else.
const LAYOUT: [(Semantic, Rect); 4] = [
    (Semantic::Sticker, Rect { rows: (0, 2), cols: (0, 2) }),
    (Semantic::Light, Rect { rows: (0, 2), cols: (4, 7) }),
    (Semantic::Grille, Rect { rows: (3, 5), cols: (2, 5) }),
    (Semantic::Seat, Rect { rows: (5, 7), cols: (0, 2) }),
];

/// Whether `semantic` is planted in images of the given viewpoint.
pub fn planted_in(semantic: Semantic, view: Viewpoint) -> bool {
    match semantic {
        Semantic::Sticker | Semantic::Grille => view == Viewpoint::Front,
        Semantic::Seat => view == Viewpoint::Back,
        Semantic::Light | Semantic::Background => true,
        Semantic::Unlabeled => false,
    }
}

/// Layout rectangles scaled to an `h × w` grid.
pub fn scaled_layout(h: usize, w: usize) -> Result<BTreeMap<Semantic, Rect>> {
    let mut out = BTreeMap::new();
    for (s, r) in LAYOUT {
        let scaled = Rect {
            rows: (r.rows.0 * h / LAYOUT_BASE, r.rows.1 * h / LAYOUT_BASE),
            cols: (r.cols.0 * w / LAYOUT_BASE, r.cols.1 * w / LAYOUT_BASE),
        };
        if scaled.rows.0 >= scaled.rows.1 || scaled.cols.0 >= scaled.cols.1 {
            return Err(Error::RegionOverflow(format!("{s} collapses on a {h}x{w} grid")));
        }
        out.insert(s, scaled);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTruth {
    pub layer: LayerTag,
    pub dims: GridDims,
    pub regions: BTreeMap<Semantic, Rect>,
    /// Unit signature per labeled semantic.
    pub signatures: BTreeMap<Semantic, FeatureVector>,
    /// Orthonormal basis of the identity subspace (orthogonal to the signatures).
    pub identity_basis: Vec<FeatureVector>,
}

impl LayerTruth {
    /// Semantic planted at grid position `(i, j)` for a given viewpoint.
    pub fn semantic_at(&self, i: usize, j: usize, view: Viewpoint) -> Semantic {
        for (s, r) in &self.regions {
            if r.contains(i, j) && planted_in(*s, view) {
                return *s;
            }
        }
        Semantic::Background
    }

    /// Row-major semantic per position.
    pub fn position_labels(&self, view: Viewpoint) -> Vec<Semantic> {
        let GridDims { height, width, .. } = self.dims;
        (0..height * width).map(|p| self.semantic_at(p / width, p % width, view)).collect()
    }

    pub fn mask(&self, semantic: Semantic, view: Viewpoint) -> BinaryMask {
        let labels = self.position_labels(view);
        BinaryMask::new(self.dims.height, self.dims.width, labels.iter().map(|&s| s == semantic).collect())
            .expect("label grid matches dims")
    }

    pub fn signature_refs(&self) -> Vec<(Semantic, FeatureVector)> {
        self.signatures.iter().map(|(s, v)| (*s, v.clone())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTruth {
    pub image_id: String,
    pub vehicle_id: String,
    pub viewpoint: Viewpoint,
    pub split: SplitTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub layers: Vec<LayerTruth>,
    /// `r × r` map taking a vehicle's front identity code to its back code.
    pub front_to_back: Vec<Vec<f64>>,
    /// Per-vehicle front identity code (length `identity_rank`).
    pub vehicle_codes: BTreeMap<String, Vec<f64>>,
    pub images: Vec<ImageTruth>,
}

impl GroundTruth {
    pub fn layer(&self, layer: LayerTag) -> Result<&LayerTruth> {
        self.layers
            .iter()
            .find(|l| l.layer == layer)
            .ok_or_else(|| Error::MissingGroundTruth(format!("no {layer} layer in ground truth")))
    }

    /// A bank whose prototypes are exactly the planted signatures of `layer`,
    /// with default thresholds.
    pub fn planted_bank(&self, layer: LayerTag) -> Result<PrototypeBank> {
        let prototypes = self
            .layer(layer)?
            .signatures
            .iter()
            .map(|(s, v)| SemanticPrototype::new(v.clone(), layer, *s))
            .collect::<Result<Vec<_>>>()?;
        let provenance =
            Provenance { manifest_hash: String::new(), sample_size: 0, seed: self.config.seed, gamma: 0.0 };
        Ok(PrototypeBank { layer, prototypes, provenance })
    }

    pub fn viewpoint_of(&self, image_id: &str) -> Result<Viewpoint> {
        self.images
            .iter()
            .find(|i| i.image_id == image_id)
            .map(|i| i.viewpoint)
            .ok_or_else(|| Error::MissingGroundTruth(format!("image {image_id}")))
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
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
