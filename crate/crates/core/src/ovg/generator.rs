use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ViewpointDiscriminators;
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, l2_regression_loss, load_checkpoint, save_checkpoint, AdamConfig, AdamState, CheckpointHeader,
    MlpConfig, MlpParams, NetworkEntry,
};
use crate::par;
use crate::tensor_io::{gap, FeatureMaps, FeatureVector, ImageRecord, LayerTag, Manifest, Viewpoint};

/// Where the original-view embedding `f_o` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedSource {
    Fc,
    GapPool5,
}

impl EmbedSource {
    pub fn layer(self) -> LayerTag {
        match self {
            EmbedSource::Fc => LayerTag::Fc,
            EmbedSource::GapPool5 => LayerTag::Pool5,
        }
    }
}

impl fmt::Display for EmbedSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbedSource::Fc => "fc",
            EmbedSource::GapPool5 => "gap_pool5",
        })
    }
}

impl FromStr for EmbedSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fc" => Ok(EmbedSource::Fc),
            "gap_pool5" => Ok(EmbedSource::GapPool5),
            other => Err(Error::InvalidArgument(format!("unknown embedding source {other:?}"))),
        }
    }
}

/// `f_o`: the stored fc vector, or the global average of pool5.
pub fn embed(maps: &FeatureMaps, source: EmbedSource) -> Result<FeatureVector> {
    if maps.layer() != source.layer() {
        return Err(Error::LayerMismatch { expected: source.layer().to_string(), found: maps.layer().to_string() });
    }
    Ok(match source {
        EmbedSource::Fc => FeatureVector::from(maps.data()),
        EmbedSource::GapPool5 => gap(maps),
    })
}

pub fn embed_record(manifest: &Manifest, record: &ImageRecord, source: EmbedSource) -> Result<FeatureVector> {
    embed(&manifest.load_layer(record, source.layer())?, source)
}

fn mean(vectors: &[&FeatureVector]) -> FeatureVector {
    let mut acc = vec![0.0; vectors[0].dim()];
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v.as_slice()) {
            *a += x;
        }
    }
    let n = vectors.len() as f64;
    FeatureVector(acc.into_iter().map(|a| a / n).collect())
}

/// Predicted viewpoint and embedding of every record of a manifest.
#[derive(Debug, Clone)]
pub struct ViewIndex {
    pub tags: Vec<Viewpoint>,
    pub embeddings: Vec<FeatureVector>,
    vehicles: Vec<String>,
    by_vehicle: BTreeMap<String, Vec<usize>>,
}

impl ViewIndex {
    pub fn build(manifest: &Manifest, disc: &ViewpointDiscriminators, source: EmbedSource) -> Result<Self> {
        let tags = disc.classify_manifest(manifest)?;
        let embeddings = par::try_map_slice(&manifest.records, |r| embed_record(manifest, r, source))?;
        Self::from_parts(manifest, tags, embeddings)
    }

    pub fn from_parts(manifest: &Manifest, tags: Vec<Viewpoint>, embeddings: Vec<FeatureVector>) -> Result<Self> {
        let n = manifest.len();
        if tags.len() != n || embeddings.len() != n {
            return Err(Error::DimMismatch { expected: n, found: tags.len().min(embeddings.len()) });
        }
        let mut by_vehicle: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in manifest.records.iter().enumerate() {
            by_vehicle.entry(r.vehicle_id.clone()).or_default().push(i);
        }
        let vehicles = manifest.records.iter().map(|r| r.vehicle_id.clone()).collect();
        Ok(Self { tags, embeddings, vehicles, by_vehicle })
    }

    /// Same-vehicle records tagged with the opposite viewpoint of record `i`.
    pub fn opposite_views(&self, i: usize) -> Vec<usize> {
        let want = self.tags[i].opposite();
        self.by_vehicle[&self.vehicles[i]].iter().copied().filter(|&j| self.tags[j] == want).collect()
    }

    /// `f̂_g` of record `i`: the mean embedding of its opposite views.
    pub fn real_orthogonal(&self, i: usize) -> Option<FeatureVector> {
        let views = self.opposite_views(i);
        (!views.is_empty()).then(|| mean(&views.iter().map(|&j| &self.embeddings[j]).collect::<Vec<_>>()))
    }
}

/// Mean embedding of the same-vehicle images in `manifest` whose predicted
/// viewpoint is opposite to `record`'s; `None` when there are none.
pub fn extract_real_orthogonal(
    record: &ImageRecord,
    manifest: &Manifest,
    disc: &ViewpointDiscriminators,
    source: EmbedSource,
) -> Result<Option<FeatureVector>> {
    let own = disc.classify_maps(
        &manifest.load_layer(record, LayerTag::Pool4)?,
        &manifest.load_layer(record, LayerTag::Pool5)?,
    )?;
    let same: Vec<&ImageRecord> = manifest
        .records
        .iter()
        .filter(|r| r.vehicle_id == record.vehicle_id && r.image_id != record.image_id)
        .collect();
    if same.is_empty() && !manifest.records.iter().any(|r| r.vehicle_id == record.vehicle_id) {
        return Err(Error::UnknownVehicle(record.vehicle_id.clone()));
    }
    let mut picked = Vec::new();
    for r in same {
        let tag =
            disc.classify_maps(&manifest.load_layer(r, LayerTag::Pool4)?, &manifest.load_layer(r, LayerTag::Pool5)?)?;
        if tag == own.opposite() {
            picked.push(embed_record(manifest, r, source)?);
        }
    }
    Ok((!picked.is_empty()).then(|| mean(&picked.iter().collect::<Vec<_>>())))
}

/// How a training pair's target is formed when a vehicle has several
/// opposite-view images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    Mean,
    RandomPerEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub hidden_dims: Vec<usize>,
    /// Generator output size; `None` uses the embedding dimension.
    pub output_dim: Option<usize>,
    pub hidden_normalization: bool,
    pub source: EmbedSource,
    pub target: TargetMode,
    pub epochs: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![2048, 4096, 2048],
            output_dim: None,
            hidden_normalization: true,
            source: EmbedSource::GapPool5,
            target: TargetMode::Mean,
            epochs: 50,
            batch: 64,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OvgModel {
    pub generator: MlpParams,
    pub source: EmbedSource,
}

pub const OVG_KIND: &str = "ovg";

#[derive(Serialize, Deserialize)]
struct OvgExtra {
    source: EmbedSource,
}

impl OvgModel {
    pub fn d_emb(&self) -> usize {
        self.generator.config().output_dim()
    }

    pub fn save(&self, path: &Path, epoch: usize, seed: u64) -> Result<()> {
        let header = CheckpointHeader {
            kind: OVG_KIND.into(),
            epoch,
            seed,
            networks: vec![NetworkEntry { name: "generator".into(), config: self.generator.config().clone() }],
            extra: serde_json::to_value(OvgExtra { source: self.source })?,
        };
        save_checkpoint(path, &header, &[&self.generator])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(path)?;
        if ckpt.header.kind != OVG_KIND {
            return Err(Error::Malformed {
                what: path.display().to_string(),
                detail: format!("expected an {OVG_KIND} checkpoint, found {:?}", ckpt.header.kind),
            });
        }
        let extra: OvgExtra = serde_json::from_value(ckpt.header.extra.clone())?;
        Ok(Self { generator: ckpt.network("generator")?.clone(), source: extra.source })
    }
}

/// `f_g`: eval-mode generator output for an original-view embedding.
pub fn generate_orthogonal(model: &OvgModel, f_o: &FeatureVector) -> Result<FeatureVector> {
    model.generator.forward_vector(f_o)
}

#[derive(Debug, Clone)]
pub struct GeneratorTraining {
    pub model: OvgModel,
    /// Mean train-mode regression loss over the batches of each epoch.
    pub history: Vec<f64>,
    /// Eval-mode mean loss over every pair before the first update.
    pub initial_loss: f64,
    /// Eval-mode mean loss over every pair after the last update.
    pub final_loss: f64,
    pub pairs: usize,
}

/// Fit the generator so that `G(f_o)` approaches the embedding of the same
/// vehicle seen from the opposite viewpoint.
pub fn train_generator(
    manifest: &Manifest,
    disc: &ViewpointDiscriminators,
    cfg: &GeneratorConfig,
) -> Result<GeneratorTraining> {
    let index = ViewIndex::build(manifest, disc, cfg.source)?;
    train_generator_indexed(&index, cfg)
}

pub fn train_generator_indexed(index: &ViewIndex, cfg: &GeneratorConfig) -> Result<GeneratorTraining> {
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument("batch must be at least 1".into()));
    }
    let pairs: Vec<(usize, Vec<usize>)> = (0..index.tags.len())
        .filter_map(|i| {
            let v = index.opposite_views(i);
            (!v.is_empty()).then_some((i, v))
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::NoTrainingPairs);
    }
    let d = index.embeddings[0].dim();
    let d_emb = cfg.output_dim.unwrap_or(d);
    if d_emb != d {
        return Err(Error::DimMismatch { expected: d, found: d_emb });
    }
    let mut dims = vec![d];
    dims.extend(&cfg.hidden_dims);
    dims.push(d_emb);
    let net_cfg = MlpConfig::new(dims, cfg.hidden_normalization)?;
    let mut generator = MlpParams::init(&net_cfg, cfg.seed)?;
    let mut opt = AdamState::new(&generator, cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6e4e_7a70);
    let means: Vec<FeatureVector> =
        pairs.iter().map(|(i, _)| index.real_orthogonal(*i).expect("pair has views")).collect();
    let inputs = Array2::from_shape_fn((pairs.len(), d), |(r, c)| index.embeddings[pairs[r].0].0[c]);
    let eval_loss = |g: &MlpParams| -> Result<f64> {
        let out = g.forward_eval(&inputs)?;
        let mut total = 0.0;
        for (r, t) in means.iter().enumerate() {
            total += l2_regression_loss(&out.row(r).to_vec(), t.as_slice())?.0;
        }
        Ok(total / means.len() as f64)
    };
    let initial_loss = eval_loss(&generator)?;
    let min_batch = if cfg.hidden_normalization && net_cfg.num_layers() > 1 { 2 } else { 1 };
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        opt.epoch = epoch;
        let targets: Vec<&FeatureVector> = match cfg.target {
            TargetMode::Mean => means.iter().collect(),
            TargetMode::RandomPerEpoch => {
                pairs.iter().map(|(_, v)| &index.embeddings[v[rng.random_range(0..v.len())]]).collect()
            }
        };
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        let (mut total, mut steps) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch) {
            if chunk.len() < min_batch {
                continue;
            }
            let b = chunk.len();
            let x = Array2::from_shape_fn((b, d), |(r, c)| index.embeddings[pairs[chunk[r]].0].0[c]);
            let (out, cache) = generator.forward_train(&x)?;
            let mut upstream = Array2::<f64>::zeros(out.dim());
            let mut loss = 0.0;
            for (r, &p) in chunk.iter().enumerate() {
                let pred = out.row(r).to_vec();
                let (l, g) = l2_regression_loss(&pred, targets[p].as_slice())?;
                loss += l;
                for (c, gv) in g.into_iter().enumerate() {
                    upstream[[r, c]] = gv / b as f64;
                }
            }
            let (grads, _) = generator.backward(&cache, &upstream)?;
            adam_step(&mut generator, &grads, &mut opt)?;
            total += loss / b as f64;
            steps += 1;
        }
        if !generator.is_finite() {
            return Err(Error::Diverged(format!("non-finite generator parameters after epoch {epoch}")));
        }
        let e = total / steps.max(1) as f64;
        log::debug!("generator epoch {epoch}: loss {e:.5}");
        history.push(e);
    }
    let final_loss = eval_loss(&generator)?;
    Ok(GeneratorTraining {
        model: OvgModel { generator, source: cfg.source },
        history,
        initial_loss,
        final_loss,
        pairs: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_io::{masked_gap, BinaryMask, SplitTag};
    use rand::Rng;

    #[test]
    fn embedding_sources() {
        let c = FeatureMaps::new(2, 3, 4, vec![0.75; 24], LayerTag::Pool5).unwrap();
        assert_eq!(embed(&c, EmbedSource::GapPool5).unwrap().0, vec![0.75; 4]);
        let fc = FeatureMaps::new(1, 1, 3, vec![1.0, -2.5, 3.25], LayerTag::Fc).unwrap();
        assert_eq!(embed(&fc, EmbedSource::Fc).unwrap().0, vec![1.0, -2.5, 3.25]);
        assert!(matches!(embed(&fc, EmbedSource::GapPool5), Err(Error::LayerMismatch { .. })));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = FeatureMaps::new(3, 3, 5, (0..45).map(|_| rng.random_range(-1.0f32..1.0)).collect(), LayerTag::Pool5)
            .unwrap();
        let all = masked_gap(&r, &BinaryMask::filled(3, 3, true)).unwrap();
        for (a, b) in embed(&r, EmbedSource::GapPool5).unwrap().0.iter().zip(&all.0) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!("gap_pool5".parse::<EmbedSource>().unwrap(), EmbedSource::GapPool5);
        assert!("pool3".parse::<EmbedSource>().is_err());
    }

    fn record(id: &str, vehicle: &str) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            vehicle_id: vehicle.into(),
            layers: BTreeMap::new(),
            gt_viewpoint: None,
            gt_masks: None,
            split: None,
        }
    }

    fn index(spec: &[(&str, Viewpoint, f64)]) -> ViewIndex {
        let records: Vec<ImageRecord> =
            spec.iter().enumerate().map(|(i, (v, _, _))| record(&format!("i{i}"), v)).collect();
        let m = Manifest::new(records, SplitTag::Train, ".").unwrap();
        let tags = spec.iter().map(|s| s.1).collect();
        let emb = spec.iter().map(|s| FeatureVector(vec![s.2, -s.2])).collect();
        ViewIndex::from_parts(&m, tags, emb).unwrap()
    }

    #[test]
    fn real_orthogonal_targets() {
        use Viewpoint::*;
        let idx = index(&[
            ("a", Front, 1.0),
            ("a", Back, 10.0),
            ("b", Front, 2.0),
            ("b", Front, 3.0),
            ("c", Back, 4.0),
            ("c", Front, 5.0),
            ("c", Front, 6.0),
            ("c", Front, 8.0),
        ]);
        assert_eq!(idx.real_orthogonal(0).unwrap().0, vec![10.0, -10.0]);
        assert!(idx.real_orthogonal(2).is_none());
        let t = idx.real_orthogonal(4).unwrap();
        assert!((t.0[0] - (5.0 + 6.0 + 8.0) / 3.0).abs() < 1e-12);
        for i in 0..8 {
            assert!(!idx.opposite_views(i).contains(&i));
        }
    }

    #[test]
    fn generator_basics() {
        use Viewpoint::*;
        let idx = index(&[("b", Front, 2.0), ("b", Front, 3.0)]);
        let cfg = GeneratorConfig { hidden_dims: vec![4], epochs: 1, ..GeneratorConfig::default() };
        assert!(matches!(train_generator_indexed(&idx, &cfg), Err(Error::NoTrainingPairs)));

        let idx = index(&[("a", Front, 1.0), ("a", Back, 2.0), ("b", Front, -1.0), ("b", Back, 0.5)]);
        let zero = GeneratorConfig { hidden_dims: vec![6, 5], epochs: 0, ..GeneratorConfig::default() };
        let t = train_generator_indexed(&idx, &zero).unwrap();
        assert!(t.history.is_empty());
        assert_eq!(t.pairs, 4);
        let init = MlpParams::init(t.model.generator.config(), 0).unwrap();
        assert_eq!(t.model.generator.learnable(), init.learnable());
        assert_eq!(t.model.d_emb(), 2);

        let x = FeatureVector(vec![0.3, 0.1]);
        let a = generate_orthogonal(&t.model, &x).unwrap();
        assert_eq!(a, generate_orthogonal(&t.model, &x).unwrap());
        assert_eq!(a, t.model.generator.forward_vector(&x).unwrap());
        let zeros = OvgModel {
            generator: MlpParams::zeros(t.model.generator.config()).unwrap(),
            source: EmbedSource::GapPool5,
        };
        assert!(generate_orthogonal(&zeros, &x).unwrap().0.iter().all(|&v| v == 0.0));
        assert!(matches!(generate_orthogonal(&t.model, &FeatureVector(vec![1.0])), Err(Error::DimMismatch { .. })));

        let wrong = GeneratorConfig { output_dim: Some(3), ..zero };
        assert!(matches!(train_generator_indexed(&idx, &wrong), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn generator_learns_a_linear_map() {
        // back embedding = M · front embedding for a fixed well-conditioned M; a
        // constant last coordinate tells the views apart, as the view-specific
        // part signatures do in real pooled features
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let m = [[1.2, -0.4, 0.3], [0.2, 0.9, -0.5], [-0.3, 0.1, 1.1]];
        let mut records = Vec::new();
        let mut tags = Vec::new();
        let mut emb = Vec::new();
        for v in 0..40 {
            let mut f: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut b: Vec<f64> = (0..3).map(|r| (0..3).map(|c| m[r][c] * f[c]).sum()).collect();
            f.push(1.0);
            b.push(-1.0);
            records.push(record(&format!("f{v}"), &format!("v{v}")));
            tags.push(Viewpoint::Front);
            emb.push(FeatureVector(f));
            records.push(record(&format!("b{v}"), &format!("v{v}")));
            tags.push(Viewpoint::Back);
            emb.push(FeatureVector(b));
        }
        let manifest = Manifest::new(records, SplitTag::Train, ".").unwrap();
        let idx = ViewIndex::from_parts(&manifest, tags, emb).unwrap();
        let cfg = GeneratorConfig { hidden_dims: vec![256, 256], batch: 16, ..GeneratorConfig::default() };
        let t = train_generator_indexed(&idx, &cfg).unwrap();
        assert!(t.final_loss <= 0.1 * t.initial_loss, "loss {} -> {}", t.initial_loss, t.final_loss);
        // bit-reproducible
        let again = train_generator_indexed(&idx, &cfg).unwrap();
        assert_eq!(again.history, t.history);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = MlpConfig::new(vec![3, 5, 3], true).unwrap();
        let m = OvgModel { generator: MlpParams::init(&cfg, 2).unwrap(), source: EmbedSource::GapPool5 };
        let p = dir.path().join("ovg.ckpt");
        m.save(&p, 1, 2).unwrap();
        let back = OvgModel::load(&p).unwrap();
        assert_eq!(back.source, EmbedSource::GapPool5);
        let x = FeatureVector(vec![0.1, 0.2, 0.3]);
        for (a, b) in generate_orthogonal(&m, &x).unwrap().0.iter().zip(&generate_orthogonal(&back, &x).unwrap().0) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
