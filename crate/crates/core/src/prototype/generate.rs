use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{PrototypeBank, Provenance, Semantic, SemanticPrototype};
use crate::clustering::{spectral_cluster, ClusterResult, SpectralConfig};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor_io::{FeatureVector, LayerTag, Manifest};

/// SHA-256 over the manifest's records serialized one JSON object per line.
pub fn manifest_hash(manifest: &Manifest) -> Result<String> {
    let mut h = Sha256::new();
    for r in &manifest.records {
        h.update(serde_json::to_vec(r)?);
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}

/// Sorted record indices drawn without replacement; all records when
/// `sample_size` reaches the manifest length.
pub fn sample_images(manifest: &Manifest, sample_size: usize, seed: u64) -> Result<Vec<usize>> {
    if manifest.is_empty() {
        return Err(Error::EmptyManifest);
    }
    if sample_size == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    let n = manifest.len();
    if sample_size >= n {
        return Ok((0..n).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, sample_size).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Every position feature of every sampled image, image by image in record
/// order and row-major within an image.
pub fn build_feature_set(
    manifest: &Manifest,
    layer: LayerTag,
    sample_size: usize,
    seed: u64,
) -> Result<Vec<FeatureVector>> {
    let idx = sample_images(manifest, sample_size, seed)?;
    let per_image = par::try_map_slice(&idx, |&i| {
        let maps = manifest.load_layer(&manifest.records[i], layer)?;
        Ok::<_, Error>((0..maps.positions()).map(|p| FeatureVector::from(maps.position(p))).collect::<Vec<_>>())
    })?;
    Ok(per_image.concat())
}

/// A freshly clustered bank together with the per-point cluster labels.
#[derive(Debug, Clone)]
pub struct FeatureSetClustering {
    pub bank: PrototypeBank,
    pub clusters: ClusterResult,
}

pub fn cluster_feature_set(
    x_set: &[FeatureVector],
    layer: LayerTag,
    cfg: &SpectralConfig,
) -> Result<FeatureSetClustering> {
    let run = spectral_cluster(x_set, cfg)?;
    let prototypes = run
        .clusters
        .centers
        .iter()
        .enumerate()
        .map(|(c, v)| {
            SemanticPrototype::new(v.clone(), layer, Semantic::Unlabeled)
                .map_err(|_| Error::DegenerateClusters(format!("cluster {c} has a zero or non-finite center")))
        })
        .collect::<Result<Vec<_>>>()?;
    let bank = PrototypeBank {
        layer,
        prototypes,
        provenance: Provenance {
            manifest_hash: String::new(),
            sample_size: x_set.len(),
            seed: cfg.seed,
            gamma: run.gamma,
        },
    };
    Ok(FeatureSetClustering { bank, clusters: run.clusters })
}

/// Spectral-cluster the feature set; cluster means become unlabeled prototypes.
pub fn generate_prototypes(x_set: &[FeatureVector], layer: LayerTag, cfg: &SpectralConfig) -> Result<PrototypeBank> {
    Ok(cluster_feature_set(x_set, layer, cfg)?.bank)
}

/// Attach semantic labels by cluster index. Unlisted clusters keep their label;
/// thresholds follow the new label's default.
pub fn label_prototypes(bank: &PrototypeBank, assignments: &BTreeMap<usize, Semantic>) -> Result<PrototypeBank> {
    let mut out = bank.clone();
    let mut used = BTreeMap::new();
    for (&idx, &sem) in assignments {
        if idx >= out.prototypes.len() {
            return Err(Error::InvalidArgument(format!(
                "cluster index {idx} out of range for {} prototypes",
                out.prototypes.len()
            )));
        }
        if sem != Semantic::Unlabeled && used.insert(sem, idx).is_some() {
            return Err(Error::DuplicateLabel(sem.to_string()));
        }
        out.prototypes[idx].semantic = sem;
        out.prototypes[idx].threshold = sem.default_threshold();
    }
    out.validate()?;
    Ok(out)
}

/// Injective cluster-to-semantic assignment maximizing the summed cosine
/// similarity between prototypes and reference vectors (exhaustive search).
pub fn auto_assign(
    bank: &PrototypeBank,
    references: &[(Semantic, FeatureVector)],
) -> Result<BTreeMap<usize, Semantic>> {
    let k = bank.prototypes.len();
    if references.len() > k {
        return Err(Error::InvalidArgument(format!("{} references for {k} prototypes", references.len())));
    }
    if k > 10 {
        return Err(Error::InvalidArgument(format!("exhaustive assignment supports at most 10 prototypes, got {k}")));
    }
    let sims: Vec<Vec<f64>> = references
        .iter()
        .map(|(_, r)| {
            if r.dim() != bank.dim() {
                return Err(Error::DimMismatch { expected: bank.dim(), found: r.dim() });
            }
            Ok(bank
                .prototypes
                .iter()
                .map(|p| p.vector.dot(r) / (p.vector.norm() * r.norm()).max(f64::MIN_POSITIVE))
                .collect())
        })
        .collect::<Result<_>>()?;

    fn search(sims: &[Vec<f64>], i: usize, used: &mut Vec<bool>, cur: &mut Vec<usize>, best: &mut (f64, Vec<usize>)) {
        if i == sims.len() {
            let score: f64 = cur.iter().enumerate().map(|(r, &c)| sims[r][c]).sum();
            if score > best.0 {
                *best = (score, cur.clone());
            }
            return;
        }
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                cur.push(c);
                search(sims, i + 1, used, cur, best);
                cur.pop();
                used[c] = false;
            }
        }
    }
    let mut best = (f64::NEG_INFINITY, Vec::new());
    search(&sims, 0, &mut vec![false; k], &mut Vec::new(), &mut best);
    Ok(best.1.into_iter().zip(references).map(|(c, (s, _))| (c, *s)).collect())
}
