//! `petreid` command line: one subcommand per pipeline stage, each a thin
//! adapter over `petreid_core`.

pub mod server;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use petreid_core::evaluation::{cross_validate, emit_report, evaluate};
use petreid_core::imaging::bundled_policies;
use petreid_core::ingest::{build_corpus, CorpusOptions, Detector, RemoteDetector, StubDetector};
use petreid_core::matchd::MatchService;
use petreid_core::model::{
    read_checkpoint, read_embeddings, write_checkpoint, write_embeddings, Backbone, BackboneConfig,
    BackboneKind, EmbeddingRecord, FeatureTable, HeadParams, ToyVit,
};
use petreid_core::pairs::{pair_stream, write_pairs_jsonl};
use petreid_core::training::{train, write_epoch_csv, FeatureStore, TrainConfig};
use petreid_core::{DecisionThreshold, Error, Manifest, Margin, Result, SiameseModel, Split};
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "petreid", version, about = "Pet re-identification with a contrastive Siamese network")]
pub struct Cli {
    /// Worker threads for parallel stages; 1 gives single-threaded runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect, crop, pad and augment an image tree into a corpus manifest.
    Ingest(IngestArgs),
    /// Draw labelled pairs from a manifest.
    Pairs(PairsArgs),
    /// Train the projection head and write a checkpoint and epoch log.
    Train(TrainArgs),
    /// k-fold cross-validation with per-fold and mean reports.
    Crossval(CrossvalArgs),
    /// Score a checkpoint on freshly drawn pairs of one split.
    Eval(EvalArgs),
    /// Write latent vectors for every manifest image.
    Embed(EmbedArgs),
    /// Run the matching service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory with one sub-directory of photos per pet.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `stub`, or the URL of a remote detector.
    #[arg(long, default_value = "stub")]
    pub detector: String,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pub heldout_fraction: f64,
    /// Side of the stored square images.
    #[arg(long, default_value_t = petreid_core::imaging::DEFAULT_SIDE)]
    pub side: u32,
}

#[derive(Debug, Args)]
pub struct PairsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0.5)]
    pub p_same: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = "train")]
    pub split: Split,
    #[arg(long)]
    pub out: PathBuf,
}

/// Where backbone features come from.
#[derive(Debug, Clone, Args)]
pub struct BackboneArgs {
    /// Backbone configuration JSON; the default toy transformer if absent.
    #[arg(long)]
    pub backbone: Option<PathBuf>,
    /// Embedding file of precomputed features keyed by image id.
    #[arg(long)]
    pub features: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Training configuration JSON.
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub backbone: BackboneArgs,
    #[arg(long)]
    pub out_checkpoint: PathBuf,
    /// Epoch log CSV.
    #[arg(long)]
    pub logs: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrossvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub backbone: BackboneArgs,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Precomputed features, for checkpoints without an image backbone.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long, default_value = "heldout")]
    pub split: Split,
    #[arg(long, default_value_t = 1024)]
    pub count: usize,
    #[arg(long, default_value_t = 0.5)]
    pub p_same: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = Margin::DEFAULT.value())]
    pub margin: f64,
    /// Metrics JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Embedding file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Store directory; created if missing.
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value = "stub")]
    pub detector: String,
    #[arg(long, default_value_t = Margin::DEFAULT.value())]
    pub margin: f64,
}

/// Parses `argv` (program name first) and runs it. Returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            EXIT_FAILURE
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match cli.command {
        Command::Ingest(a) => ingest(&a),
        Command::Pairs(a) => pairs(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Crossval(a) => crossval(&a),
        Command::Eval(a) => eval(&a),
        Command::Embed(a) => embed(&a),
        Command::Serve(a) => serve(&a),
    }
}

pub fn detector_from(spec: &str) -> Box<dyn Detector> {
    if spec == "stub" {
        Box::new(StubDetector)
    } else {
        Box::new(RemoteDetector::new(spec))
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let opts = CorpusOptions {
        seed: a.seed,
        heldout_fraction: a.heldout_fraction,
        side: a.side,
    };
    let detector = detector_from(&a.detector);
    let out = build_corpus(&a.input, &a.out, detector.as_ref(), &bundled_policies(), &opts)?;
    for s in &out.skipped {
        eprintln!("skipped {}: {}", s.path.display(), s.reason);
    }
    print_json(&out.manifest.stats())
}

fn pairs(a: &PairsArgs) -> Result<()> {
    let manifest = Manifest::read(&a.manifest)?;
    let pairs = pair_stream(&manifest, a.split, a.p_same, a.seed, a.count)?;
    write_pairs_jsonl(&pairs, &a.out)
}

fn feature_table(path: &Path) -> Result<FeatureTable> {
    let file = read_embeddings(path)?;
    let mut table = FeatureTable::new(file.dim);
    for r in file.records {
        table.insert(r.id, r.values)?;
    }
    Ok(table)
}

/// The backbone named by the flags, plus the toy transformer to store in
/// checkpoints when there is one.
pub fn backbone_from(args: &BackboneArgs) -> Result<(Backbone, Option<ToyVit>)> {
    let cfg = match &args.backbone {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            serde_json::from_str::<BackboneConfig>(&text)?
        }
        None if args.features.is_some() => BackboneConfig {
            kind: BackboneKind::Precomputed,
            ..Default::default()
        },
        None => BackboneConfig::default(),
    };
    match cfg.kind {
        BackboneKind::ToyViT => {
            let vit = ToyVit::init(cfg)?;
            Ok((Backbone::ToyVit(Box::new(vit.clone())), Some(vit)))
        }
        BackboneKind::Precomputed => {
            let path = args.features.as_ref().ok_or_else(|| {
                Error::InvalidInput("a precomputed backbone needs --features".to_owned())
            })?;
            Ok((Backbone::Precomputed(feature_table(path)?), None))
        }
    }
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let manifest = Manifest::read(&a.manifest)?;
    let cfg = TrainConfig::load(&a.config)?;
    let (backbone, vit) = backbone_from(&a.backbone)?;
    let features = FeatureStore::compute(&manifest, &backbone)?;
    let outcome = train(&manifest, &features, &cfg, None)?;
    write_checkpoint(&a.out_checkpoint, &outcome.head, vit.as_ref())?;
    write_epoch_csv(&outcome.logs, &a.logs)?;
    print_json(&serde_json::json!({
        "train": outcome.final_train.rates()?,
        "test": outcome.final_test.rates()?,
    }))
}

/// Checkpoint file name of fold `i` in a cross-validation report directory.
pub fn fold_checkpoint_name(i: usize) -> String {
    format!("fold{i}.lpaw")
}

fn crossval(a: &CrossvalArgs) -> Result<()> {
    let manifest = Manifest::read(&a.manifest)?;
    let cfg = TrainConfig::load(&a.config)?;
    let (backbone, vit) = backbone_from(&a.backbone)?;
    let features = FeatureStore::compute(&manifest, &backbone)?;
    let outcome = cross_validate(&manifest, &features, &cfg, a.k)?;
    let logs: Vec<_> = outcome.folds.iter().map(|f| f.logs.clone()).collect();
    emit_report(&outcome.report, &logs, &a.out)?;
    for f in &outcome.folds {
        write_checkpoint(&a.out.join(fold_checkpoint_name(f.fold)), &f.head, vit.as_ref())?;
    }
    print_json(&outcome.report.mean)
}

/// Model for a checkpoint: its own backbone, or precomputed features.
pub fn model_from(checkpoint: &Path, features: Option<&Path>) -> Result<SiameseModel> {
    let ckpt = read_checkpoint(checkpoint)?;
    match (ckpt.backbone, features) {
        (Some(vit), _) => SiameseModel::new(Backbone::ToyVit(Box::new(vit)), ckpt.head),
        (None, Some(path)) => SiameseModel::new(Backbone::Precomputed(feature_table(path)?), ckpt.head),
        (None, None) => Err(Error::InvalidInput(
            "checkpoint has no image backbone; pass --features".to_owned(),
        )),
    }
}

fn head_features(model: &SiameseModel, manifest: &Manifest) -> Result<FeatureStore> {
    FeatureStore::compute(manifest, &model.backbone)
}

#[derive(Debug, Serialize)]
struct EvalOutput {
    split: Split,
    pairs: usize,
    counts: petreid_core::evaluation::ConfusionCounts,
    metrics: petreid_core::evaluation::MetricsReport,
}

fn eval(a: &EvalArgs) -> Result<()> {
    let manifest = Manifest::read(&a.manifest)?;
    let model = model_from(&a.checkpoint, a.features.as_deref())?;
    let features = head_features(&model, &manifest)?;
    let pairs = pair_stream(&manifest, a.split, a.p_same, a.seed, a.count)?;
    let tau = DecisionThreshold::for_margin(Margin::new(a.margin)?);
    let (counts, metrics) = evaluate(&model.head, &features, &pairs, tau)?;
    let out = EvalOutput {
        split: a.split,
        pairs: pairs.len(),
        counts,
        metrics,
    };
    let text = serde_json::to_string_pretty(&out)? + "\n";
    std::fs::write(&a.out, text).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    print_json(&out.metrics)
}

/// Latent vector of every manifest image, in manifest order.
pub fn embed_manifest(model: &SiameseModel, manifest: &Manifest) -> Result<Vec<EmbeddingRecord>> {
    let features = head_features(model, manifest)?;
    let head: &HeadParams = &model.head;
    manifest
        .records()
        .iter()
        .map(|r| {
            Ok(EmbeddingRecord {
                id: r.image_id.clone(),
                values: head.forward(features.get(&r.image_id)?)?,
            })
        })
        .collect()
}

fn embed(a: &EmbedArgs) -> Result<()> {
    let manifest = Manifest::read(&a.manifest)?;
    let model = model_from(&a.checkpoint, a.features.as_deref())?;
    let records = embed_manifest(&model, &manifest)?;
    write_embeddings(&a.out, model.latent_size(), &records)?;
    eprintln!("{} embeddings written to {}", records.len(), a.out.display());
    Ok(())
}

fn serve(a: &ServeArgs) -> Result<()> {
    let model = model_from(&a.checkpoint, None)?;
    let service = MatchService::open(
        &a.store,
        model,
        detector_from(&a.detector),
        Margin::new(a.margin)?,
        a.checkpoint.display().to_string(),
    )?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Io {
            path: a.store.clone(),
            source: e,
        })?;
    let addr = format!("{}:{}", a.host, a.port);
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| Error::Io {
            path: PathBuf::from(&addr),
            source: e,
        })?;
        log::info!("listening on {addr}");
        eprintln!("listening on http://{addr}");
        axum::serve(listener, server::router(Arc::new(service)))
            .await
            .map_err(|e| Error::Io {
                path: PathBuf::from(&addr),
                source: e,
            })
    })
}
