use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{files, scaled_layout, GridDims, GroundTruth, ImageTruth, LayerTruth, SynthConfig};
use crate::error::{Error, Result};
use crate::par;
use crate::prototype::Semantic;
use crate::tensor_io::{
    store_feature_maps, write_mask_pgm, write_records, FeatureMaps, FeatureVector, ImageRecord, LayerTag, Manifest,
    SplitTag, Viewpoint,
};

const LAYERS: [LayerTag; 2] = [LayerTag::Pool4, LayerTag::Pool5];

/// A generated corpus on disk.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub truth: GroundTruth,
}

impl Corpus {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: Manifest::load(&dir.join(files::MANIFEST))?,
            truth: GroundTruth::load(&dir.join(files::GROUND_TRUTH))?,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn load_manifest(&self, name: &str) -> Result<Manifest> {
        Manifest::load(&self.path(name))
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// `n` random orthonormal vectors in `R^dim` by Gram-Schmidt on Gaussian draws.
fn orthonormal_set(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    while out.len() < n {
        let mut v = gaussian(rng, dim);
        for _ in 0..2 {
            for e in &out {
                let p = dot(&v, e);
                v.iter_mut().zip(e).for_each(|(x, y)| *x -= p * y);
            }
        }
        if normalize(&mut v) > 1e-6 {
            out.push(v);
        }
    }
    out
}

/// Signatures are the vertices of a regular simplex (pairwise cosine
/// `-1/(k-1)`) so no signature has positive cosine with another one.
fn layer_truth(rng: &mut ChaCha8Rng, layer: LayerTag, dims: GridDims, rank: usize) -> Result<LayerTruth> {
    let k = Semantic::LABELED.len();
    let basis = orthonormal_set(rng, dims.channels, k + rank);
    let mean: Vec<f64> = (0..dims.channels).map(|c| basis[..k].iter().map(|e| e[c]).sum::<f64>() / k as f64).collect();
    let signatures = Semantic::LABELED
        .iter()
        .zip(&basis[..k])
        .map(|(s, e)| {
            let mut u: Vec<f64> = e.iter().zip(&mean).map(|(a, m)| a - m).collect();
            normalize(&mut u);
            (*s, FeatureVector(u))
        })
        .collect();
    Ok(LayerTruth {
        layer,
        dims,
        regions: scaled_layout(dims.height, dims.width)?,
        signatures,
        identity_basis: basis[k..].iter().cloned().map(FeatureVector).collect(),
    })
}

/// `Q1 · diag(s) · Q2ᵀ` with singular values in [0.5, 1.5], so the condition
/// number stays at most 3.
fn well_conditioned(rng: &mut ChaCha8Rng, r: usize) -> DMatrix<f64> {
    let q1 = DMatrix::from_vec(r, r, gaussian(rng, r * r)).qr().q();
    let q2 = DMatrix::from_vec(r, r, gaussian(rng, r * r)).qr().q();
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(r, |_, _| rng.random_range(0.5..1.5)));
    q1 * s * q2.transpose()
}

/// Front count per vehicle by cumulative rounding, so the corpus total is
/// within one image of `front_fraction`.
fn front_counts(cfg: &SynthConfig) -> Vec<usize> {
    let per = cfg.front_fraction * cfg.images_per_vehicle as f64;
    (0..cfg.n_vehicles).map(|v| ((per * (v + 1) as f64).round() - (per * v as f64).round()) as usize).collect()
}

struct ImageSpec {
    index: usize,
    vehicle: usize,
    image_id: String,
    view: Viewpoint,
}

fn image_maps(
    cfg: &SynthConfig,
    truth: &LayerTruth,
    code: &[f64],
    spec: &ImageSpec,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureMaps> {
    let GridDims { height, width, channels } = truth.dims;
    let identity: Vec<f64> = (0..channels)
        .map(|c| truth.identity_basis.iter().zip(code).map(|(b, z)| b.0[c] * z).sum::<f64>() * cfg.identity_strength)
        .collect();
    let distractor: Vec<f64> = if cfg.distractor_strength > 0.0 {
        // random direction orthogonal to every signature
        let mut v = gaussian(rng, channels);
        for _ in 0..2 {
            for s in truth.signatures.values() {
                let p = dot(&v, s.as_slice()) / dot(s.as_slice(), s.as_slice());
                v.iter_mut().zip(s.as_slice()).for_each(|(x, y)| *x -= p * y);
            }
        }
        normalize(&mut v);
        v.iter().map(|x| x * cfg.distractor_strength).collect()
    } else {
        vec![0.0; channels]
    };
    let mut data = Vec::with_capacity(height * width * channels);
    for i in 0..height {
        for j in 0..width {
            let sem = truth.semantic_at(i, j, spec.view);
            let sig = truth.signatures[&sem].as_slice();
            let extra: &[f64] = match sem {
                Semantic::Sticker | Semantic::Light | Semantic::Grille => &identity,
                _ => &distractor,
            };
            for c in 0..channels {
                let noise =
                    if cfg.noise_sigma > 0.0 { cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
                data.push((sig[c] + extra[c] + noise) as f32);
            }
        }
    }
    FeatureMaps::new(height, width, channels, data, truth.layer)
}

fn map_name(image_id: &str, layer: LayerTag) -> String {
    format!("maps/{image_id}_{layer}.fmap")
}

fn mask_name(view: Viewpoint, s: Semantic) -> String {
    format!("masks/{view}_{s}.pgm")
}

/// Write a corpus under `out_dir`. The output is a pure function of `cfg`.
pub fn gen_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let layers = LAYERS
        .iter()
        .map(|&l| layer_truth(&mut rng, l, cfg.grid(l)?, cfg.identity_rank))
        .collect::<Result<Vec<_>>>()?;
    let a = well_conditioned(&mut rng, cfg.identity_rank);
    let r = cfg.identity_rank;
    let front_codes: Vec<Vec<f64>> = (0..cfg.n_vehicles)
        .map(|_| gaussian(&mut rng, r).into_iter().map(|z| z / (r as f64).sqrt()).collect())
        .collect();
    let back_codes: Vec<Vec<f64>> = front_codes
        .iter()
        .map(|z| (a.clone() * nalgebra::DVector::from_column_slice(z)).iter().copied().collect())
        .collect();

    let n_train = ((cfg.train_fraction * cfg.n_vehicles as f64).round() as usize).clamp(1, cfg.n_vehicles - 1);
    let vehicle_id = |v: usize| format!("v{v:03}");
    let mut specs = Vec::new();
    for (v, &n_front) in front_counts(cfg).iter().enumerate() {
        let mut views: Vec<Viewpoint> =
            (0..cfg.images_per_vehicle).map(|j| if j < n_front { Viewpoint::Front } else { Viewpoint::Back }).collect();
        // seeded Fisher-Yates so fronts are not always the first images
        for j in (1..views.len()).rev() {
            views.swap(j, rng.random_range(0..=j));
        }
        for (j, view) in views.into_iter().enumerate() {
            specs.push(ImageSpec {
                index: specs.len(),
                vehicle: v,
                image_id: format!("{}_{j:02}", vehicle_id(v)),
                view,
            });
        }
    }

    fs::create_dir_all(out_dir.join("maps"))?;
    fs::create_dir_all(out_dir.join("masks"))?;
    let pool5 = &layers[1];
    for view in [Viewpoint::Front, Viewpoint::Back] {
        for s in Semantic::LABELED {
            write_mask_pgm(&out_dir.join(mask_name(view, s)), &pool5.mask(s, view))?;
        }
    }

    par::try_map_slice(&specs, |spec| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(spec.index as u64 + 1);
        let code = match spec.view {
            Viewpoint::Front => &front_codes[spec.vehicle],
            Viewpoint::Back => &back_codes[spec.vehicle],
        };
        for truth in &layers {
            let maps = image_maps(cfg, truth, code, spec, &mut rng)?;
            store_feature_maps(&out_dir.join(map_name(&spec.image_id, truth.layer)), &maps)?;
        }
        Ok::<_, Error>(())
    })?;

    let split_of = |v: usize| if v < n_train { SplitTag::Train } else { SplitTag::Test };
    let record = |spec: &ImageSpec, split: SplitTag| ImageRecord {
        image_id: spec.image_id.clone(),
        vehicle_id: vehicle_id(spec.vehicle),
        layers: LAYERS.iter().map(|&l| (l, map_name(&spec.image_id, l))).collect(),
        gt_viewpoint: Some(spec.view),
        gt_masks: Some(
            Semantic::LABELED.iter().map(|&s| (s.to_string(), mask_name(spec.view, s))).collect::<BTreeMap<_, _>>(),
        ),
        split: Some(split),
    };
    let select = |name: &str, split: SplitTag, keep: &dyn Fn(&ImageSpec) -> bool| -> Result<()> {
        let recs: Vec<ImageRecord> = specs.iter().filter(|s| keep(s)).map(|s| record(s, split)).collect();
        write_records(&out_dir.join(name), &recs)
    };
    select(files::MANIFEST, SplitTag::Offline, &|_| true)?;
    select(files::TRAIN, SplitTag::Train, &|s| split_of(s.vehicle) == SplitTag::Train)?;
    select(files::TEST, SplitTag::Test, &|s| split_of(s.vehicle) == SplitTag::Test)?;
    let first_of_vehicle = |s: &ImageSpec| s.index.is_multiple_of(cfg.images_per_vehicle);
    select(files::QUERY, SplitTag::Test, &|s| split_of(s.vehicle) == SplitTag::Test && first_of_vehicle(s))?;
    select(files::GALLERY, SplitTag::Test, &|s| split_of(s.vehicle) == SplitTag::Test && !first_of_vehicle(s))?;
    select(files::QUERY_FRONT, SplitTag::Test, &|s| {
        split_of(s.vehicle) == SplitTag::Test && s.view == Viewpoint::Front
    })?;
    select(files::GALLERY_BACK, SplitTag::Test, &|s| {
        split_of(s.vehicle) == SplitTag::Test && s.view == Viewpoint::Back
    })?;

    let truth = GroundTruth {
        config: cfg.clone(),
        layers,
        front_to_back: (0..r).map(|i| (0..r).map(|j| a[(i, j)]).collect()).collect(),
        vehicle_codes: front_codes.iter().enumerate().map(|(v, z)| (vehicle_id(v), z.clone())).collect(),
        images: specs
            .iter()
            .map(|s| ImageTruth {
                image_id: s.image_id.clone(),
                vehicle_id: vehicle_id(s.vehicle),
                viewpoint: s.view,
                split: split_of(s.vehicle),
            })
            .collect(),
    };
    truth.save(&out_dir.join(files::GROUND_TRUTH))?;
    Corpus::load(out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::planted_in;
    use crate::tensor_io::load_feature_maps;

    fn small() -> SynthConfig {
        SynthConfig { n_vehicles: 4, images_per_vehicle: 5, front_fraction: 0.4, ..SynthConfig::default() }
    }

    fn tree_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
        let mut out = BTreeMap::new();
        for sub in ["", "maps", "masks"] {
            for e in fs::read_dir(dir.join(sub)).unwrap() {
                let p = e.unwrap().path();
                if p.is_file() {
                    out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
                }
            }
        }
        out
    }

    #[test]
    fn deterministic_tree() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        gen_corpus(&small(), a.path()).unwrap();
        gen_corpus(&small(), b.path()).unwrap();
        let (ta, tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
        assert_eq!(ta.len(), 7 + 1 + 10 + 4 * 5 * 2);
        assert_eq!(ta, tb);
    }

    #[test]
    fn noiseless_front_sticker_equals_signature() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { noise_sigma: 0.0, identity_strength: 1e-300, ..small() };
        let corpus = gen_corpus(&cfg, dir.path()).unwrap();
        let l5 = corpus.truth.layer(LayerTag::Pool5).unwrap();
        let sig = &l5.signatures[&Semantic::Sticker];
        let front = corpus.manifest.records.iter().find(|r| r.gt_viewpoint == Some(Viewpoint::Front)).unwrap();
        let maps = corpus.manifest.load_layer(front, LayerTag::Pool5).unwrap();
        for p in 0..maps.positions() {
            if l5.semantic_at(p / 7, p % 7, Viewpoint::Front) == Semantic::Sticker {
                for (a, b) in maps.position(p).iter().zip(sig.as_slice()) {
                    assert_eq!(*a, *b as f32);
                }
            }
        }
    }

    #[test]
    fn signatures_and_identity_subspace() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = gen_corpus(&small(), dir.path()).unwrap();
        for l in &corpus.truth.layers {
            let sigs: Vec<&FeatureVector> = l.signatures.values().collect();
            for (i, a) in sigs.iter().enumerate() {
                assert!((a.norm() - 1.0).abs() < 1e-12);
                for b in &sigs[i + 1..] {
                    let c = a.dot(b);
                    assert!(c.abs() <= 0.3 && c < 0.0, "cosine {c}");
                }
                for e in &l.identity_basis {
                    assert!(a.dot(e).abs() < 1e-12);
                }
            }
        }
        let a = DMatrix::from_fn(8, 8, |i, j| corpus.truth.front_to_back[i][j]);
        let sv = a.singular_values();
        assert!(sv.max() / sv.min() <= 10.0);
    }

    #[test]
    fn viewpoint_counts_and_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small();
        let corpus = gen_corpus(&cfg, dir.path()).unwrap();
        let fronts = corpus.truth.images.iter().filter(|i| i.viewpoint == Viewpoint::Front).count();
        let target = cfg.front_fraction * (cfg.n_vehicles * cfg.images_per_vehicle) as f64;
        assert!((fronts as f64 - target).abs() <= 1.0);
        let train = corpus.load_manifest(files::TRAIN).unwrap();
        let test = corpus.load_manifest(files::TEST).unwrap();
        assert_eq!(train.len() + test.len(), corpus.manifest.len());
        assert_eq!(train.vehicle_ids().len(), 2);
        let q = corpus.load_manifest(files::QUERY).unwrap();
        let g = corpus.load_manifest(files::GALLERY).unwrap();
        assert_eq!(q.len(), 2);
        assert_eq!(q.len() + g.len(), test.len());
        let qf = corpus.load_manifest(files::QUERY_FRONT).unwrap();
        let gb = corpus.load_manifest(files::GALLERY_BACK).unwrap();
        assert!(qf.records.iter().all(|r| r.gt_viewpoint == Some(Viewpoint::Front)));
        assert!(gb.records.iter().all(|r| r.gt_viewpoint == Some(Viewpoint::Back)));
        assert_eq!(qf.len() + gb.len(), test.len());
        let rec = &corpus.manifest.records[0];
        let maps = load_feature_maps(&corpus.manifest.resolve(&rec.layers[&LayerTag::Pool4]), LayerTag::Pool4).unwrap();
        assert_eq!((maps.height(), maps.width(), maps.channels()), (14, 14, 64));
    }

    #[test]
    fn gt_masks_match_layout() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = gen_corpus(&small(), dir.path()).unwrap();
        let l5 = corpus.truth.layer(LayerTag::Pool5).unwrap();
        for rec in &corpus.manifest.records {
            let view = rec.gt_viewpoint.unwrap();
            for (name, rel) in rec.gt_masks.as_ref().unwrap() {
                let s: Semantic = name.parse().unwrap();
                let m = crate::tensor_io::read_mask_pgm(&corpus.manifest.resolve(rel)).unwrap();
                assert_eq!(m, l5.mask(s, view));
                assert_eq!(m.is_empty(), !planted_in(s, view));
            }
        }
    }
}
