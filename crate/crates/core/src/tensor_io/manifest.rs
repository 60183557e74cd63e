//! JSON Lines dataset manifests.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::fmap::load_feature_maps;
use super::types::{FeatureMaps, LayerTag};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Viewpoint {
    Front,
    Back,
}

impl Viewpoint {
    pub fn opposite(self) -> Viewpoint {
        match self {
            Viewpoint::Front => Viewpoint::Back,
            Viewpoint::Back => Viewpoint::Front,
        }
    }
}

impl fmt::Display for Viewpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Viewpoint::Front => "front",
            Viewpoint::Back => "back",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    #[default]
    Train,
    Test,
    Offline,
}

impl FromStr for SplitTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "test" => Ok(SplitTag::Test),
            "offline" => Ok(SplitTag::Offline),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

/// One manifest line. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub vehicle_id: String,
    pub layers: BTreeMap<LayerTag, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_viewpoint: Option<Viewpoint>,
    /// Semantic name to pool5-grid mask file (PGM).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_masks: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitTag>,
}

impl ImageRecord {
    /// Whether two records show the same vehicle.
    pub fn same_identity(&self, other: &ImageRecord) -> bool {
        self.vehicle_id == other.vehicle_id
    }
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub records: Vec<ImageRecord>,
    pub split_tag: SplitTag,
    base_dir: PathBuf,
}

impl Manifest {
    pub fn new(records: Vec<ImageRecord>, split_tag: SplitTag, base_dir: impl Into<PathBuf>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyManifest);
        }
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.image_id.as_str()) {
                return Err(Error::DuplicateImageId(r.image_id.clone()));
            }
        }
        Ok(Self { records, split_tag, base_dir: base_dir.into() })
    }

    /// Parses a manifest and checks that every referenced file exists.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path)?;
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ImageRecord = serde_json::from_str(line).map_err(|e| Error::Malformed {
                what: format!("{}:{}", path.display(), lineno + 1),
                detail: e.to_string(),
            })?;
            records.push(rec);
        }
        let splits: HashSet<SplitTag> = records.iter().filter_map(|r| r.split).collect();
        let split_tag = match splits.len() {
            0 => SplitTag::default(),
            1 => *splits.iter().next().unwrap(),
            _ => {
                return Err(Error::Malformed {
                    what: path.display().to_string(),
                    detail: "records carry mixed split tags".into(),
                })
            }
        };
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = Self::new(records, split_tag, base)?;
        manifest.check_files()?;
        Ok(manifest)
    }

    fn check_files(&self) -> Result<()> {
        for r in &self.records {
            let masks = r.gt_masks.iter().flat_map(|m| m.values());
            for rel in r.layers.values().chain(masks) {
                let p = self.resolve(rel);
                if !p.is_file() {
                    return Err(Error::MissingFile(p));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_records(path, &self.records)
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn load_layer(&self, record: &ImageRecord, layer: LayerTag) -> Result<FeatureMaps> {
        let rel = record
            .layers
            .get(&layer)
            .ok_or_else(|| Error::MissingLayer { image_id: record.image_id.clone(), layer: layer.to_string() })?;
        load_feature_maps(&self.resolve(rel), layer)
    }

    /// Sub-manifest of the records accepted by `keep`, sharing the base directory.
    pub fn filter<F: Fn(&ImageRecord) -> bool>(&self, split_tag: SplitTag, keep: F) -> Result<Manifest> {
        let records = self.records.iter().filter(|r| keep(r)).cloned().collect();
        Manifest::new(records, split_tag, self.base_dir.clone())
    }

    /// Vehicle ids in first-appearance order.
    pub fn vehicle_ids(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.records.iter().filter(|r| seen.insert(r.vehicle_id.as_str())).map(|r| r.vehicle_id.clone()).collect()
    }
}

pub fn write_records(path: &Path, records: &[ImageRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}
