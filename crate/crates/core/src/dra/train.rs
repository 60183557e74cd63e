use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{discriminative_prototypes, extract_discriminative, DraModel};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, batch_hard_triplet_loss, cross_entropy_loss, AdamConfig, AdamState, MlpConfig, MlpParams,
    ReidLossWeights,
};
use crate::par;
use crate::prototype::PrototypeBank;
use crate::tensor_io::{FeatureVector, LayerTag, Manifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub hidden_dims: Vec<usize>,
    /// Dimension of `f_d`.
    pub output_dim: usize,
    pub hidden_normalization: bool,
    pub epochs: usize,
    /// P: identities per batch.
    pub identities_per_batch: usize,
    /// K: images per identity in a batch.
    pub images_per_identity: usize,
    pub weights: ReidLossWeights,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![1024, 768, 512],
            output_dim: 256,
            hidden_normalization: true,
            epochs: 45,
            identities_per_batch: 16,
            images_per_identity: 4,
            weights: ReidLossWeights::default(),
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl FusionConfig {
    /// Keep K and pick P so that `P * K` does not exceed `batch`.
    pub fn with_batch(mut self, batch: usize) -> Result<Self> {
        let p = batch / self.images_per_identity;
        if p < 2 {
            return Err(Error::InvalidArgument(format!(
                "batch {batch} leaves fewer than 2 identities at {} images each",
                self.images_per_identity
            )));
        }
        self.identities_per_batch = p;
        Ok(self)
    }

    pub fn batch_size(&self) -> usize {
        self.identities_per_batch * self.images_per_identity
    }

    pub fn network(&self, input_dim: usize) -> Result<MlpConfig> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(self.output_dim);
        MlpConfig::new(dims, self.hidden_normalization)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub combined: f64,
    pub cross_entropy: f64,
    pub triplet: f64,
}

#[derive(Debug, Clone)]
pub struct FusionTraining {
    pub model: DraModel,
    pub history: Vec<EpochLoss>,
}

/// Train the fusion network and its classifier head with the weighted sum of
/// cross-entropy and batch-hard triplet losses over P×K identity batches.
pub fn train_fusion(manifest: &Manifest, bank5: &PrototypeBank, cfg: &FusionConfig) -> Result<FusionTraining> {
    cfg.weights.validate()?;
    if cfg.images_per_identity < 2 || cfg.identities_per_batch < 2 {
        return Err(Error::InvalidArgument("batches need at least 2 identities of at least 2 images".into()));
    }
    let prototypes = discriminative_prototypes(bank5)?;

    let mut by_vehicle: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        by_vehicle.entry(r.vehicle_id.as_str()).or_default().push(i);
    }
    let order = manifest.vehicle_ids();
    let groups: Vec<(String, Vec<usize>)> = order
        .into_iter()
        .filter_map(|v| {
            let imgs = &by_vehicle[v.as_str()];
            (imgs.len() >= 2).then(|| (v, imgs.clone()))
        })
        .collect();
    if groups.len() < 2 {
        return Err(Error::DegenerateDataset(format!("{} vehicle(s) with at least 2 images; need 2", groups.len())));
    }

    let used: Vec<usize> = groups.iter().flat_map(|(_, g)| g.iter().copied()).collect();
    let features: BTreeMap<usize, FeatureVector> = used
        .iter()
        .copied()
        .zip(par::try_map_slice(&used, |&i| {
            let maps = manifest.load_layer(&manifest.records[i], LayerTag::Pool5)?;
            Ok::<_, Error>(extract_discriminative(&maps, &prototypes)?.vector)
        })?)
        .collect();
    let input_dim = features.values().next().map_or(0, FeatureVector::dim);

    let mut fusion = MlpParams::init(&cfg.network(input_dim)?, cfg.seed)?;
    let mut head =
        MlpParams::init(&MlpConfig::new(vec![cfg.output_dim, groups.len()], false)?, cfg.seed.wrapping_add(1))?;
    let mut opt_f = AdamState::new(&fusion, cfg.adam);
    let mut opt_h = AdamState::new(&head, cfg.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xba7c_4e55);
    let batches_per_epoch = used.len().div_ceil(cfg.batch_size()).max(1);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        opt_f.epoch = epoch;
        opt_h.epoch = epoch;
        let (mut sum_c, mut sum_ce, mut sum_t, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for _ in 0..batches_per_epoch {
            let mut ids: Vec<usize> = (0..groups.len()).collect();
            ids.shuffle(&mut rng);
            ids.truncate(cfg.identities_per_batch);
            ids.sort_unstable();
            let mut rows = Vec::new();
            let mut labels = Vec::new();
            for &id in &ids {
                let imgs = &groups[id].1;
                let k = cfg.images_per_identity;
                let picks: Vec<usize> = if imgs.len() >= k {
                    sample(&mut rng, imgs.len(), k).into_iter().map(|j| imgs[j]).collect()
                } else {
                    let mut p = imgs.clone();
                    while p.len() < k {
                        p.push(imgs[rng.random_range(0..imgs.len())]);
                    }
                    p
                };
                for i in picks {
                    rows.push(&features[&i]);
                    labels.push(id);
                }
            }
            let b = rows.len();
            if b < 2 {
                continue;
            }
            let x = Array2::from_shape_fn((b, input_dim), |(r, c)| rows[r].0[c]);
            let (emb, cache_f) = fusion.forward_train(&x)?;
            let (logits, cache_h) = head.forward_train(&emb)?;

            let mut d_logits = Array2::<f64>::zeros(logits.dim());
            let mut ce = 0.0;
            for r in 0..b {
                let row = logits.row(r).to_vec();
                let (l, g) = cross_entropy_loss(&row, labels[r])?;
                ce += l;
                for (c, gv) in g.into_iter().enumerate() {
                    d_logits[[r, c]] = cfg.weights.alpha1 * gv / b as f64;
                }
            }
            ce /= b as f64;
            let (trip, d_trip) = batch_hard_triplet_loss(&emb, &labels, cfg.weights.triplet_margin)?;
            let (grads_h, d_emb_ce) = head.backward(&cache_h, &d_logits)?;
            let d_emb = d_emb_ce + d_trip * cfg.weights.alpha2;
            let (grads_f, _) = fusion.backward(&cache_f, &d_emb)?;
            adam_step(&mut fusion, &grads_f, &mut opt_f)?;
            adam_step(&mut head, &grads_h, &mut opt_h)?;

            sum_c += cfg.weights.alpha1 * ce + cfg.weights.alpha2 * trip;
            sum_ce += ce;
            sum_t += trip;
            steps += 1;
        }
        if !fusion.is_finite() || !head.is_finite() {
            return Err(Error::Diverged(format!("non-finite fusion parameters after epoch {epoch}")));
        }
        let n = steps.max(1) as f64;
        let e = EpochLoss { epoch, combined: sum_c / n, cross_entropy: sum_ce / n, triplet: sum_t / n };
        log::debug!("fusion epoch {epoch}: loss {:.5}", e.combined);
        history.push(e);
    }
    Ok(FusionTraining {
        model: DraModel { fusion, head, prototypes, classes: groups.into_iter().map(|(v, _)| v).collect() },
        history,
    })
}
