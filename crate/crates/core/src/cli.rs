//! Command-line entry point. Every command writes its outputs under `--out`
//! together with a `<command>.config.json` echo of the effective settings.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::clustering::{SpectralConfig, DEFAULT_MAX_POINTS};
use crate::dra::{train_fusion, DraModel, FusionConfig};
use crate::error::{Error, ErrorKind, Result};
use crate::nn::{gradcheck, AdamConfig, ReidLossWeights};
use crate::ovg::{
    build_discriminators, train_generator, DiscriminatorConfig, EmbedSource, GeneratorConfig, OvgModel, ViewClustering,
    ViewpointDiscriminators,
};
use crate::prototype::{
    auto_assign, build_feature_set, generate_prototypes, indication_matrix, label_prototypes, manifest_hash,
    probability_matrix, render_heatmap, PrototypeBank, Semantic,
};
use crate::retrieval::{evaluate, EvalConfig, Models, Protocol, DEFAULT_MAX_RANK, DEFAULT_W1, DEFAULT_W2};
use crate::synth::{gen_corpus, GridDims, GroundTruth, SynthConfig};
use crate::tensor_io::{write_mask_pgm, LayerTag, Manifest};

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "draovg", version, about = "Vehicle re-identification over precomputed feature maps")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
struct Global {
    /// Base seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, default_value = "warn")]
    #[serde(serialize_with = "as_display")]
    log_level: log::LevelFilter,
    /// Cap on worker threads; 0 keeps the default.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

fn as_display<T: std::fmt::Display, S: serde::Serializer>(v: &T, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus with planted ground truth.
    GenSynthetic(GenSynthetic),
    /// Cluster feature vectors of one layer into an unlabeled prototype bank.
    GenPrototypes(GenPrototypes),
    /// Attach semantic labels to a bank's prototypes.
    LabelProtos(LabelProtos),
    /// Write probability heatmaps and masks of one semantic for every image.
    Localize(Localize),
    /// Build the front/back viewpoint discriminators.
    BuildViewpoint(BuildViewpoint),
    /// Tag every image of a manifest as front or back.
    ClassifyViewpoint(ClassifyViewpoint),
    /// Train the discriminative-region fusion network.
    TrainFusion(TrainFusion),
    /// Train the orthogonal-view generator.
    TrainGenerator(TrainGenerator),
    /// Rank a gallery for every query and report CMC and mAP.
    Evaluate(Evaluate),
    /// Compare analytic and finite-difference gradients.
    GradCheck(GradCheck),
}

#[derive(Debug, Args, Serialize)]
struct GenSynthetic {
    #[arg(long, default_value_t = 20)]
    vehicles: usize,
    #[arg(long, default_value_t = 8)]
    images_per_vehicle: usize,
    #[arg(long, default_value_t = 0.5)]
    front_fraction: f64,
    /// Square pool4 grid side.
    #[arg(long, default_value_t = 14)]
    pool4_size: usize,
    #[arg(long, default_value_t = 7)]
    pool5_size: usize,
    #[arg(long, default_value_t = 64)]
    channels: usize,
    #[arg(long, default_value_t = 0.05)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    identity_strength: f64,
    #[arg(long, default_value_t = 8)]
    identity_rank: usize,
    #[arg(long, default_value_t = 0.0)]
    distractor_strength: f64,
    #[arg(long, default_value_t = 0.5)]
    train_fraction: f64,
}

#[derive(Debug, Args, Serialize)]
struct GenPrototypes {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    layer: LayerTag,
    #[arg(long, default_value_t = 5)]
    clusters: usize,
    /// RBF gamma; the median heuristic is used when omitted.
    #[arg(long)]
    gamma: Option<f64>,
    /// Number of images whose positions form the feature set.
    #[arg(long, default_value_t = 1000)]
    sample_size: usize,
    /// Points beyond this are assigned to the nearest center instead of
    /// entering the eigenproblem.
    #[arg(long, default_value_t = DEFAULT_MAX_POINTS)]
    max_points: usize,
}

#[derive(Debug, Args, Serialize)]
struct LabelProtos {
    #[arg(long)]
    bank: PathBuf,
    /// `semantic=index`, repeatable.
    #[arg(long, value_parser = parse_assignment)]
    assign: Vec<(Semantic, usize)>,
    /// Name prototypes after the closest planted signatures in this ground-truth file.
    #[arg(long, conflicts_with = "assign")]
    auto_from_gt: Option<PathBuf>,
}

fn parse_assignment(s: &str) -> std::result::Result<(Semantic, usize), String> {
    let (sem, idx) = s.split_once('=').ok_or_else(|| format!("expected semantic=index, got {s:?}"))?;
    let sem: Semantic = sem.parse().map_err(|e: Error| e.to_string())?;
    let idx: usize = idx.parse().map_err(|_| format!("bad prototype index {idx:?}"))?;
    Ok((sem, idx))
}

#[derive(Debug, Args, Serialize)]
struct Localize {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    semantic: Semantic,
    /// Where the PGMs go; defaults to `<out>/heatmaps`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Heatmap side in pixels.
    #[arg(long, default_value_t = 224)]
    image_size: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
enum Algorithm {
    Kmeans,
    Spectral,
}

#[derive(Debug, Args, Serialize)]
struct BuildViewpoint {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    bank4: PathBuf,
    #[arg(long)]
    bank5: PathBuf,
    #[arg(long, value_enum, default_value_t = Algorithm::Kmeans)]
    algorithm: Algorithm,
    #[arg(long, default_value_t = 0.5)]
    min_sticker_contrast: f64,
}

#[derive(Debug, Args, Serialize)]
struct ClassifyViewpoint {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    disc: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct TrainFusion {
    #[arg(long)]
    manifest: PathBuf,
    /// Labeled pool5 bank.
    #[arg(long)]
    bank: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    alpha1: f64,
    #[arg(long, default_value_t = 0.9)]
    alpha2: f64,
    #[arg(long, default_value_t = 0.3)]
    margin: f64,
    #[arg(long, default_value_t = 45)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 4)]
    images_per_identity: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [1024, 768, 512])]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 256)]
    output_dim: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
enum Source {
    Fc,
    GapPool5,
}

#[derive(Debug, Args, Serialize)]
struct TrainGenerator {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    disc: PathBuf,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [2048, 4096, 2048])]
    hidden: Vec<usize>,
    #[arg(long, value_enum, default_value_t = Source::GapPool5)]
    source: Source,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
enum ProtocolArg {
    Full,
    Sampled,
}

#[derive(Debug, Args, Serialize)]
struct Evaluate {
    #[arg(long)]
    query: PathBuf,
    #[arg(long)]
    gallery: PathBuf,
    #[arg(long)]
    dra: PathBuf,
    #[arg(long)]
    ovg: PathBuf,
    #[arg(long)]
    disc: PathBuf,
    #[arg(long, default_value_t = DEFAULT_W1)]
    w1: f64,
    #[arg(long, default_value_t = DEFAULT_W2)]
    w2: f64,
    #[arg(long, value_enum, default_value_t = ProtocolArg::Full)]
    protocol: ProtocolArg,
    #[arg(long, default_value_t = DEFAULT_MAX_RANK)]
    max_rank: usize,
    /// Keep gallery entries that share the query's image id.
    #[arg(long)]
    keep_self: bool,
    /// Also write the full distance matrix as CSV.
    #[arg(long)]
    dump_distances: bool,
}

#[derive(Debug, Args, Serialize)]
struct GradCheck {
    #[arg(long, default_value_t = 100)]
    trials: usize,
}

/// Parses `argv` (including the program name), runs the command, and maps
/// the outcome to an exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let _ = env_logger::Builder::new().filter_level(cli.global.log_level).try_init();
    if cli.global.threads > 0 {
        crate::par::set_threads(cli.global.threads);
    }
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            match e.kind() {
                ErrorKind::Usage => EXIT_USAGE,
                ErrorKind::Data => EXIT_DATA,
                ErrorKind::Numeric => EXIT_NUMERIC,
            }
        }
    }
}

#[derive(Serialize)]
struct Echo<'a, C: Serialize, E: Serialize> {
    command: &'a str,
    global: &'a Global,
    args: &'a C,
    effective: E,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn echo<C: Serialize, E: Serialize>(g: &Global, command: &str, args: &C, effective: E) -> Result<()> {
    write_json(&g.out.join(format!("{command}.config.json")), &Echo { command, global: g, args, effective })
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.to_path_buf()))
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    // validate inputs before any output is created
    match &cli.command {
        Command::GenSynthetic(_) | Command::GradCheck(_) => {}
        Command::GenPrototypes(a) => require_file(&a.manifest)?,
        Command::LabelProtos(a) => {
            require_file(&a.bank)?;
            if let Some(gt) = &a.auto_from_gt {
                require_file(gt)?;
            } else if a.assign.is_empty() {
                return Err(Error::InvalidArgument("give --assign semantic=index or --auto-from-gt".into()));
            }
        }
        Command::Localize(a) => [&a.manifest, &a.bank].into_iter().try_for_each(|p| require_file(p))?,
        Command::BuildViewpoint(a) => {
            [&a.manifest, &a.bank4, &a.bank5].into_iter().try_for_each(|p| require_file(p))?
        }
        Command::ClassifyViewpoint(a) => [&a.manifest, &a.disc].into_iter().try_for_each(|p| require_file(p))?,
        Command::TrainFusion(a) => [&a.manifest, &a.bank].into_iter().try_for_each(|p| require_file(p))?,
        Command::TrainGenerator(a) => [&a.manifest, &a.disc].into_iter().try_for_each(|p| require_file(p))?,
        Command::Evaluate(a) => {
            [&a.query, &a.gallery, &a.dra, &a.ovg, &a.disc].into_iter().try_for_each(|p| require_file(p))?
        }
    }
    std::fs::create_dir_all(&g.out)?;
    match &cli.command {
        Command::GenSynthetic(a) => gen_synthetic(g, a),
        Command::GenPrototypes(a) => gen_prototypes(g, a),
        Command::LabelProtos(a) => label_protos(g, a),
        Command::Localize(a) => localize_cmd(g, a),
        Command::BuildViewpoint(a) => build_viewpoint(g, a),
        Command::ClassifyViewpoint(a) => classify_viewpoint_cmd(g, a),
        Command::TrainFusion(a) => train_fusion_cmd(g, a),
        Command::TrainGenerator(a) => train_generator_cmd(g, a),
        Command::Evaluate(a) => evaluate_cmd(g, a),
        Command::GradCheck(a) => grad_check(g, a),
    }
}

fn gen_synthetic(g: &Global, a: &GenSynthetic) -> Result<()> {
    let cfg = SynthConfig {
        n_vehicles: a.vehicles,
        images_per_vehicle: a.images_per_vehicle,
        front_fraction: a.front_fraction,
        pool4: GridDims { height: a.pool4_size, width: a.pool4_size, channels: a.channels },
        pool5: GridDims { height: a.pool5_size, width: a.pool5_size, channels: a.channels },
        noise_sigma: a.noise_sigma,
        identity_strength: a.identity_strength,
        identity_rank: a.identity_rank,
        distractor_strength: a.distractor_strength,
        train_fraction: a.train_fraction,
        seed: g.seed,
    };
    cfg.validate()?;
    let corpus = gen_corpus(&cfg, &g.out)?;
    log::info!("wrote {} images to {}", corpus.manifest.len(), g.out.display());
    echo(g, "gen-synthetic", a, &cfg)
}

fn gen_prototypes(g: &Global, a: &GenPrototypes) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let x = build_feature_set(&manifest, a.layer, a.sample_size, g.seed)?;
    let cfg = SpectralConfig { k: a.clusters, gamma: a.gamma, seed: g.seed, max_points: a.max_points };
    let mut bank = generate_prototypes(&x, a.layer, &cfg)?;
    bank.provenance.manifest_hash = manifest_hash(&manifest)?;
    bank.save(&g.out.join(format!("bank_{}.json", a.layer)))?;
    echo(g, "gen-prototypes", a, serde_json::json!({ "feature_vectors": x.len(), "gamma": bank.provenance.gamma }))
}

fn label_protos(g: &Global, a: &LabelProtos) -> Result<()> {
    let bank = PrototypeBank::load(&a.bank)?;
    let assignments: BTreeMap<usize, Semantic> = match &a.auto_from_gt {
        Some(gt) => {
            let truth = GroundTruth::load(gt)?;
            auto_assign(&bank, &truth.layer(bank.layer)?.signature_refs())?
        }
        None => a.assign.iter().map(|&(s, i)| (i, s)).collect(),
    };
    let labeled = label_prototypes(&bank, &assignments)?;
    labeled.save(&g.out.join(format!("bank_{}_labeled.json", bank.layer)))?;
    let effective: BTreeMap<String, usize> = assignments.iter().map(|(i, s)| (s.to_string(), *i)).collect();
    echo(g, "label-protos", a, effective)
}

fn localize_cmd(g: &Global, a: &Localize) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let bank = PrototypeBank::load(&a.bank)?;
    let proto = bank.require(a.semantic)?;
    let dir = a.out_dir.clone().unwrap_or_else(|| g.out.join("heatmaps"));
    std::fs::create_dir_all(&dir)?;
    crate::par::try_map_slice(&manifest.records, |r| {
        let maps = manifest.load_layer(r, bank.layer)?;
        let p = probability_matrix(&maps, proto)?;
        render_heatmap(&p, a.image_size, a.image_size, &dir.join(format!("{}_{}_heat.pgm", r.image_id, a.semantic)))?;
        let mask = indication_matrix(&p, proto.threshold)?;
        write_mask_pgm(&dir.join(format!("{}_{}_mask.pgm", r.image_id, a.semantic)), &mask)
    })?;
    echo(g, "localize", a, serde_json::json!({ "threshold": proto.threshold, "out_dir": dir }))
}

fn build_viewpoint(g: &Global, a: &BuildViewpoint) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let cfg = DiscriminatorConfig {
        seed: g.seed,
        algorithm: match a.algorithm {
            Algorithm::Kmeans => ViewClustering::KMeans,
            Algorithm::Spectral => ViewClustering::Spectral,
        },
        min_sticker_contrast: a.min_sticker_contrast,
        ..DiscriminatorConfig::default()
    };
    let disc = build_discriminators(&manifest, &PrototypeBank::load(&a.bank4)?, &PrototypeBank::load(&a.bank5)?, &cfg)?;
    disc.save(&g.out.join("viewpoint.json"))?;
    echo(g, "build-viewpoint", a, cfg)
}

#[derive(Serialize)]
struct Tagged<'a> {
    image_id: &'a str,
    predicted: crate::tensor_io::Viewpoint,
    #[serde(skip_serializing_if = "Option::is_none")]
    ground_truth: Option<crate::tensor_io::Viewpoint>,
}

fn classify_viewpoint_cmd(g: &Global, a: &ClassifyViewpoint) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let disc = ViewpointDiscriminators::load(&a.disc)?;
    let tags = disc.classify_manifest(&manifest)?;
    let rows: Vec<Tagged> = manifest
        .records
        .iter()
        .zip(&tags)
        .map(|(r, &t)| Tagged { image_id: &r.image_id, predicted: t, ground_truth: r.gt_viewpoint })
        .collect();
    let labeled: Vec<&Tagged> = rows.iter().filter(|r| r.ground_truth.is_some()).collect();
    let accuracy = (!labeled.is_empty())
        .then(|| labeled.iter().filter(|r| Some(r.predicted) == r.ground_truth).count() as f64 / labeled.len() as f64);
    write_json(&g.out.join("viewpoints.json"), &serde_json::json!({ "accuracy": accuracy, "images": rows }))?;
    if let Some(acc) = accuracy {
        println!("viewpoint accuracy {acc:.4} over {} images", labeled.len());
    }
    echo(g, "classify-viewpoint", a, serde_json::json!({ "images": rows.len() }))
}

fn train_fusion_cmd(g: &Global, a: &TrainFusion) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let bank = PrototypeBank::load(&a.bank)?;
    let cfg = FusionConfig {
        hidden_dims: a.hidden.clone(),
        output_dim: a.output_dim,
        epochs: a.epochs,
        images_per_identity: a.images_per_identity,
        weights: ReidLossWeights { alpha1: a.alpha1, alpha2: a.alpha2, triplet_margin: a.margin },
        adam: AdamConfig { base_lr: a.lr, ..AdamConfig::default() },
        seed: g.seed,
        ..FusionConfig::default()
    }
    .with_batch(a.batch)?;
    let t = train_fusion(&manifest, &bank, &cfg)?;
    t.model.save(&g.out.join("dra.ckpt"), cfg.epochs, g.seed)?;
    write_json(&g.out.join("fusion_history.json"), &t.history)?;
    echo(g, "train-fusion", a, &cfg)
}

fn train_generator_cmd(g: &Global, a: &TrainGenerator) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let disc = ViewpointDiscriminators::load(&a.disc)?;
    let cfg = GeneratorConfig {
        hidden_dims: a.hidden.clone(),
        source: match a.source {
            Source::Fc => EmbedSource::Fc,
            Source::GapPool5 => EmbedSource::GapPool5,
        },
        epochs: a.epochs,
        batch: a.batch,
        adam: AdamConfig { base_lr: a.lr, ..AdamConfig::default() },
        seed: g.seed,
        ..GeneratorConfig::default()
    };
    let t = train_generator(&manifest, &disc, &cfg)?;
    t.model.save(&g.out.join("ovg.ckpt"), cfg.epochs, g.seed)?;
    write_json(
        &g.out.join("generator_history.json"),
        &serde_json::json!({
            "initial_loss": t.initial_loss,
            "final_loss": t.final_loss,
            "pairs": t.pairs,
            "history": t.history,
        }),
    )?;
    echo(g, "train-generator", a, &cfg)
}

fn evaluate_cmd(g: &Global, a: &Evaluate) -> Result<()> {
    let query = Manifest::load(&a.query)?;
    let gallery = Manifest::load(&a.gallery)?;
    let dra = DraModel::load(&a.dra)?;
    let ovg = OvgModel::load(&a.ovg)?;
    let disc = ViewpointDiscriminators::load(&a.disc)?;
    let cfg = EvalConfig {
        w1: a.w1,
        w2: a.w2,
        max_rank: a.max_rank,
        protocol: match a.protocol {
            ProtocolArg::Full => Protocol::Full,
            ProtocolArg::Sampled => Protocol::SampledPerIdentity,
        },
        seed: g.seed,
        exclude_self: !a.keep_self,
    };
    let eval = evaluate(&query, &gallery, Models { dra: &dra, ovg: &ovg, disc: &disc }, &cfg)?;
    eval.report.save(&g.out.join("eval_report.json"))?;
    eval.report.write_cmc_csv(&g.out.join("cmc.csv"))?;
    if a.dump_distances {
        eval.write_distance_csv(&g.out.join("distances.csv"))?;
    }
    println!("mAP {:.4}  rank-1 {:.4}  rank-5 {:.4}", eval.report.map, eval.report.rank(1), eval.report.rank(5));
    echo(g, "evaluate", a, &cfg)
}

fn grad_check(g: &Global, a: &GradCheck) -> Result<()> {
    let results = gradcheck::run_all(a.trials, g.seed)?;
    write_json(&g.out.join("gradcheck.json"), &results)?;
    echo(g, "grad-check", a, serde_json::json!({ "tolerance": gradcheck::REL_TOLERANCE }))?;
    for r in &results {
        println!("{:<22} max rel error {:.3e}  {}", r.name, r.max_rel_error, if r.passed { "ok" } else { "FAIL" });
    }
    match results.iter().find(|r| !r.passed) {
        Some(r) => {
            Err(Error::Diverged(format!("{} gradient check failed (max rel error {:.3e})", r.name, r.max_rel_error)))
        }
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_in(dir: &Path, args: &[&str]) -> i32 {
        let mut argv = vec!["draovg".to_string(), "--out".into(), dir.display().to_string()];
        argv.extend(args.iter().map(|s| s.to_string()));
        run(argv)
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["draovg", "no-such-command"]), EXIT_USAGE);
        assert_eq!(run(["draovg"]), EXIT_USAGE);
        assert_eq!(run(["draovg", "label-protos", "--assign", "sticker"]), EXIT_USAGE);
    }

    #[test]
    fn missing_input_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let ghost = dir.path().join("ghost.jsonl");
        let code = run_in(dir.path(), &["gen-prototypes", "--manifest", ghost.to_str().unwrap(), "--layer", "pool5"]);
        assert_eq!(code, EXIT_DATA);
    }

    #[test]
    fn gen_synthetic_is_reproducible_and_echoes_config() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let args = ["gen-synthetic", "--vehicles", "3", "--images-per-vehicle", "2"];
        assert_eq!(run_in(a.path(), &args), EXIT_OK);
        assert_eq!(run_in(b.path(), &args), EXIT_OK);
        for name in ["manifest.jsonl", "gt.json", "maps/v001_01_pool5.fmap"] {
            assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        }
        let echo: serde_json::Value =
            serde_json::from_slice(&std::fs::read(a.path().join("gen-synthetic.config.json")).unwrap()).unwrap();
        assert_eq!(echo["effective"]["n_vehicles"], 3);
    }

    #[test]
    fn assignment_parsing() {
        assert_eq!(parse_assignment("light=3").unwrap(), (Semantic::Light, 3));
        assert!(parse_assignment("light").is_err());
        assert!(parse_assignment("wheel=1").is_err());
    }
}
