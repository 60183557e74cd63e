//! Identity descriptors, the combined front/back/discriminative distance, and
//! CMC / mAP evaluation.

mod metrics;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dra::DraModel;
use crate::error::{Error, Result};
use crate::ovg::{embed, generate_orthogonal, OvgModel, ViewpointDiscriminators};
use crate::par::{self, Exec};
use crate::tensor_io::{FeatureMaps, FeatureVector, ImageRecord, LayerTag, Manifest, Viewpoint};

pub use metrics::{
    average_precision, cmc, cmc_from_ranks, mean_average_precision, mean_average_precision_from_ranks, rank_matches,
    Labeled,
};

pub const DEFAULT_W1: f64 = 0.1;
pub const DEFAULT_W2: f64 = 0.65;
pub const DEFAULT_MAX_RANK: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityDescriptor {
    pub image_id: String,
    pub vehicle_id: String,
    pub f_front: FeatureVector,
    pub f_back: FeatureVector,
    pub f_disc: FeatureVector,
    pub tag: Viewpoint,
    /// One flag per discriminative region whose mask was empty.
    pub absence_flags: Vec<bool>,
}

impl Labeled for IdentityDescriptor {
    fn identity(&self) -> &str {
        &self.vehicle_id
    }

    fn item_id(&self) -> &str {
        &self.image_id
    }
}

/// Everything needed to describe an image.
#[derive(Debug, Clone, Copy)]
pub struct Models<'a> {
    pub dra: &'a DraModel,
    pub ovg: &'a OvgModel,
    pub disc: &'a ViewpointDiscriminators,
}

/// Descriptor from already-loaded maps. `embed_maps` is the layer the
/// generator was trained on (fc or pool5).
pub fn describe_maps(
    image_id: &str,
    vehicle_id: &str,
    maps4: &FeatureMaps,
    maps5: &FeatureMaps,
    embed_maps: &FeatureMaps,
    models: Models<'_>,
) -> Result<IdentityDescriptor> {
    let tag = models.disc.classify_maps(maps4, maps5)?;
    let f_o = embed(embed_maps, models.ovg.source)?;
    let f_g = generate_orthogonal(models.ovg, &f_o)?;
    if f_g.dim() != f_o.dim() {
        return Err(Error::DimMismatch { expected: f_o.dim(), found: f_g.dim() });
    }
    let (f_front, f_back) = match tag {
        Viewpoint::Front => (f_o, f_g),
        Viewpoint::Back => (f_g, f_o),
    };
    let (f_disc, absence_flags) = models.dra.describe(maps5)?;
    Ok(IdentityDescriptor {
        image_id: image_id.into(),
        vehicle_id: vehicle_id.into(),
        f_front,
        f_back,
        f_disc,
        tag,
        absence_flags,
    })
}

pub fn assemble_descriptor(
    manifest: &Manifest,
    record: &ImageRecord,
    models: Models<'_>,
) -> Result<IdentityDescriptor> {
    let maps4 = manifest.load_layer(record, LayerTag::Pool4)?;
    let maps5 = manifest.load_layer(record, LayerTag::Pool5)?;
    let embed_layer = models.ovg.source.layer();
    let embed_maps =
        if embed_layer == LayerTag::Pool5 { maps5.clone() } else { manifest.load_layer(record, embed_layer)? };
    describe_maps(&record.image_id, &record.vehicle_id, &maps4, &maps5, &embed_maps, models)
}

/// Descriptors of every record, in record order.
pub fn assemble_descriptors(manifest: &Manifest, models: Models<'_>) -> Result<Vec<IdentityDescriptor>> {
    par::try_map_slice(&manifest.records, |r| assemble_descriptor(manifest, r, models))
}

fn euclidean(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch { expected: a.dim(), found: b.dim() });
    }
    Ok(a.0.iter().zip(&b.0).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// `w1 · (‖front_q − front_c‖ + ‖back_q − back_c‖) + w2 · ‖disc_q − disc_c‖`.
pub fn pairwise_distance(q: &IdentityDescriptor, c: &IdentityDescriptor, w1: f64, w2: f64) -> Result<f64> {
    for w in [w1, w2] {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::NegativeWeight(w));
        }
    }
    Ok(w1 * (euclidean(&q.f_front, &c.f_front)? + euclidean(&q.f_back, &c.f_back)?)
        + w2 * euclidean(&q.f_disc, &c.f_disc)?)
}

/// Query × gallery distances, one row per query.
pub fn distance_matrix(
    queries: &[IdentityDescriptor],
    gallery: &[IdentityDescriptor],
    w1: f64,
    w2: f64,
) -> Result<Vec<Vec<f64>>> {
    distance_matrix_with(Exec::default(), queries, gallery, w1, w2)
}

pub fn distance_matrix_with(
    exec: Exec,
    queries: &[IdentityDescriptor],
    gallery: &[IdentityDescriptor],
    w1: f64,
    w2: f64,
) -> Result<Vec<Vec<f64>>> {
    exec.try_map_slice(queries, |q| gallery.iter().map(|c| pairwise_distance(q, c, w1, w2)).collect())
}

/// Plain Euclidean distances between two vector lists, for single-feature baselines.
pub fn euclidean_matrix(queries: &[FeatureVector], gallery: &[FeatureVector]) -> Result<Vec<Vec<f64>>> {
    par::try_map_slice(queries, |q| gallery.iter().map(|c| euclidean(q, c)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Every gallery image takes part.
    #[default]
    Full,
    /// One randomly drawn gallery image per vehicle.
    SampledPerIdentity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub w1: f64,
    pub w2: f64,
    pub max_rank: usize,
    pub protocol: Protocol,
    pub seed: u64,
    /// Drop gallery entries that share the query's image id.
    pub exclude_self: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            w1: DEFAULT_W1,
            w2: DEFAULT_W2,
            max_rank: DEFAULT_MAX_RANK,
            protocol: Protocol::Full,
            seed: 0,
            exclude_self: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub image_id: String,
    pub vehicle_id: String,
    pub average_precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "mAP")]
    pub map: f64,
    /// Rank (1-based) to hit rate.
    pub cmc: BTreeMap<usize, f64>,
    pub per_query: Vec<QueryResult>,
    pub config: EvalConfig,
    pub queries: usize,
    pub gallery: usize,
    pub discriminator_seed: u64,
}

impl EvalReport {
    pub fn rank(&self, k: usize) -> f64 {
        self.cmc.get(&k).copied().unwrap_or_else(|| self.cmc.values().last().copied().unwrap_or(0.0))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn write_cmc_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("rank,value\n");
        for (k, v) in &self.cmc {
            let _ = writeln!(out, "{k},{v}");
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub distances: Vec<Vec<f64>>,
    pub query_ids: Vec<String>,
    pub gallery_ids: Vec<String>,
}

impl Evaluation {
    /// Distance matrix as CSV with a header row of gallery ids and the query
    /// id leading each row.
    pub fn write_distance_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("query");
        for g in &self.gallery_ids {
            out.push(',');
            out.push_str(g);
        }
        out.push('\n');
        for (q, row) in self.query_ids.iter().zip(&self.distances) {
            out.push_str(q);
            for d in row {
                let _ = write!(out, ",{d}");
            }
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Indices of the gallery kept under the protocol. Sampling avoids the
/// queries' own images when a vehicle has any other.
fn gallery_subset(queries: &[IdentityDescriptor], gallery: &[IdentityDescriptor], cfg: &EvalConfig) -> Vec<usize> {
    match cfg.protocol {
        Protocol::Full => (0..gallery.len()).collect(),
        Protocol::SampledPerIdentity => {
            let query_ids: std::collections::HashSet<&str> = queries.iter().map(|q| q.image_id.as_str()).collect();
            let mut by_vehicle: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, g) in gallery.iter().enumerate() {
                by_vehicle.entry(g.vehicle_id.as_str()).or_default().push(i);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut keep: Vec<usize> = by_vehicle
                .values()
                .map(|idx| {
                    let others: Vec<usize> =
                        idx.iter().copied().filter(|&i| !query_ids.contains(gallery[i].image_id.as_str())).collect();
                    let pool = if others.is_empty() { idx } else { &others };
                    *pool.choose(&mut rng).expect("non-empty group")
                })
                .collect();
            keep.sort_unstable();
            keep
        }
    }
}

/// Ranks `gallery` for every query under `cfg` and summarizes CMC and mAP.
pub fn evaluate_descriptors(
    queries: &[IdentityDescriptor],
    gallery: &[IdentityDescriptor],
    cfg: &EvalConfig,
) -> Result<Evaluation> {
    if gallery.is_empty() {
        return Err(Error::EmptyGallery);
    }
    if cfg.max_rank == 0 {
        return Err(Error::InvalidArgument("max_rank must be at least 1".into()));
    }
    let kept: Vec<IdentityDescriptor> =
        gallery_subset(queries, gallery, cfg).into_iter().map(|i| gallery[i].clone()).collect();
    let distances = distance_matrix(queries, &kept, cfg.w1, cfg.w2)?;
    let ql: Vec<&str> = queries.iter().map(|q| q.vehicle_id.as_str()).collect();
    let gl: Vec<&str> = kept.iter().map(|g| g.vehicle_id.as_str()).collect();
    let ranks = rank_matches(&distances, &ql, &gl, |q, g| cfg.exclude_self && queries[q].image_id == kept[g].image_id)?;
    let max_rank = cfg.max_rank.min(kept.len());
    let curve = cmc_from_ranks(&ranks, max_rank);
    let (map, aps) = mean_average_precision_from_ranks(&ranks);
    let report = EvalReport {
        map,
        cmc: curve.into_iter().enumerate().map(|(k, v)| (k + 1, v)).collect(),
        per_query: queries
            .iter()
            .zip(aps)
            .map(|(q, ap)| QueryResult {
                image_id: q.image_id.clone(),
                vehicle_id: q.vehicle_id.clone(),
                average_precision: ap,
            })
            .collect(),
        config: cfg.clone(),
        queries: queries.len(),
        gallery: kept.len(),
        discriminator_seed: 0,
    };
    Ok(Evaluation {
        report,
        distances,
        query_ids: queries.iter().map(|q| q.image_id.clone()).collect(),
        gallery_ids: kept.iter().map(|g| g.image_id.clone()).collect(),
    })
}

pub fn evaluate(query: &Manifest, gallery: &Manifest, models: Models<'_>, cfg: &EvalConfig) -> Result<Evaluation> {
    let q = assemble_descriptors(query, models)?;
    let g = assemble_descriptors(gallery, models)?;
    let mut eval = evaluate_descriptors(&q, &g, cfg)?;
    eval.report.discriminator_seed = models.disc.provenance.seed;
    Ok(eval)
}

/// mAP and rank-1 for every `(w1, w2)` pair, reusing one set of descriptors.
pub fn weight_sweep(
    queries: &[IdentityDescriptor],
    gallery: &[IdentityDescriptor],
    grid: &[(f64, f64)],
    base: &EvalConfig,
) -> Result<Vec<(f64, f64, f64, f64)>> {
    grid.iter()
        .map(|&(w1, w2)| {
            let cfg = EvalConfig { w1, w2, ..base.clone() };
            let r = evaluate_descriptors(queries, gallery, &cfg)?.report;
            Ok((w1, w2, r.map, r.rank(1)))
        })
        .collect()
}
