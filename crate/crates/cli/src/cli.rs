//! Subcommand parsing and dispatch.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 I/O
//! error. Diagnostics go to stderr; data goes to stdout or `--out`.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use promptknn_core::builder::{self, FilterConfig, VocabMode, Vocabulary};
use promptknn_core::eval::{self, EvalSet, SyntheticFixtureSpec, Variant};
use promptknn_core::predictor::{predict_batch, stack_predictions};
use promptknn_core::store::{self, read_embeddings, write_embeddings_file};
use promptknn_core::{CorpusIndex, Error, FusionConfig};
use serde::Deserialize;

use crate::service::{self, ServiceConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "promptknn",
    version,
    about = "Predict prompt embeddings for images by top-k prompt retrieval"
)]
pub struct Cli {
    /// JSON file whose keys mirror the long flag names. Flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter raw prompts and write an aligned corpus.
    Build(BuildArgs),
    /// Validate a corpus manifest and the files it references.
    IndexCheck(ManifestArgs),
    /// Predict prompt embeddings for a file of image embeddings.
    Predict(PredictArgs),
    /// Compare prediction variants against ground truth.
    Eval(EvalArgs),
    /// Grid search over k and w1 (with w2 = 1 - w1).
    Sweep(SweepArgs),
    /// Write a seeded synthetic corpus with queries and ground truth.
    Fixture(FixtureArgs),
    /// Serve predictions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ManifestArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct FusionArgs {
    /// Neighbors to retrieve [default: 100]
    #[arg(long)]
    pub k: Option<usize>,
    /// Weight of the KNN component [default: 0.6]
    #[arg(long)]
    pub w1: Option<f64>,
    /// Weight of the caption component [default: 0.4]
    #[arg(long)]
    pub w2: Option<f64>,
    /// Fuse the raw components instead of unit-normalizing each first.
    #[arg(long)]
    pub no_normalize_components: bool,
    /// Leave the fused prediction unnormalized.
    #[arg(long)]
    pub no_normalize_output: bool,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Raw prompts, JSON-Lines with "id" and "prompt".
    #[arg(long)]
    pub prompts: PathBuf,
    /// CLIP text embeddings, row-aligned with the raw prompts.
    #[arg(long)]
    pub clip: PathBuf,
    /// Sentence embeddings, row-aligned with the raw prompts.
    #[arg(long)]
    pub sent: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub dedup_threshold: Option<f64>,
    #[arg(long)]
    pub vocab_threshold: Option<f64>,
    /// off, exact_match or embedding_similarity
    #[arg(long)]
    pub vocab_mode: Option<VocabMode>,
    /// Plain-text vocabulary, one term per line (exact_match).
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Vocabulary embeddings (embedding_similarity).
    #[arg(long)]
    pub vocab_embeddings: Option<PathBuf>,
    /// Term embeddings, row i embedding line i of --terms (embedding_similarity).
    #[arg(long)]
    pub term_embeddings: Option<PathBuf>,
    #[arg(long)]
    pub terms: Option<PathBuf>,
    #[arg(long)]
    pub min_prompt_chars: Option<usize>,
    #[arg(long)]
    pub min_ascii_ratio: Option<f64>,
    /// Write the build report here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Include per-stage timings in the report.
    #[arg(long)]
    pub timings: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// CLIP image embeddings, one query per row.
    #[arg(long)]
    pub images: PathBuf,
    /// Caption sentence embeddings, row-aligned with --images.
    #[arg(long)]
    pub captions: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write neighbor lists as JSON-Lines.
    #[arg(long)]
    pub neighbors_out: Option<PathBuf>,
    #[command(flatten)]
    pub fusion: FusionArgs,
}

#[derive(Debug, Args)]
pub struct EvalInputs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub ground_truth: PathBuf,
    #[arg(long)]
    pub captions: Option<PathBuf>,
    /// Also write the results as JSON to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub inputs: EvalInputs,
    /// Comma-separated variants: clip, knn@K, fused@K.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
    #[command(flatten)]
    pub fusion: FusionArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub inputs: EvalInputs,
    #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
    pub k_values: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.6")]
    pub w1_values: Vec<f64>,
    #[command(flatten)]
    pub fusion: FusionArgs,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub clusters: usize,
    #[arg(long, default_value_t = 64)]
    pub per_cluster: usize,
    #[arg(long, default_value_t = 500)]
    pub queries: usize,
    #[arg(long, default_value_t = 64)]
    pub clip_dim: usize,
    #[arg(long, default_value_t = 32)]
    pub sent_dim: usize,
    #[arg(long, default_value_t = 0.35)]
    pub noise: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Also write captions.emb: ground truth plus noise of this scale.
    #[arg(long)]
    pub captions_noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Address to bind [default: 127.0.0.1:8080]
    #[arg(long)]
    pub bind: Option<SocketAddr>,
    /// [default: 4194304]
    #[arg(long)]
    pub max_body_bytes: Option<usize>,
    /// [default: 30]
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    #[command(flatten)]
    pub fusion: FusionArgs,
}

/// `--config` contents. Keys mirror long flag names; snake_case also works.
#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ConfigFile {
    pub manifest: Option<PathBuf>,
    pub k: Option<usize>,
    pub w1: Option<f64>,
    pub w2: Option<f64>,
    #[serde(alias = "normalize_components")]
    pub normalize_components: Option<bool>,
    #[serde(alias = "normalize_output")]
    pub normalize_output: Option<bool>,
    pub bind: Option<SocketAddr>,
    #[serde(alias = "max_body_bytes")]
    pub max_body_bytes: Option<usize>,
    #[serde(alias = "timeout_secs")]
    pub timeout_secs: Option<u64>,
    #[serde(alias = "dedup_threshold")]
    pub dedup_threshold: Option<f64>,
    #[serde(alias = "vocab_threshold")]
    pub vocab_threshold: Option<f64>,
    #[serde(alias = "vocab_mode")]
    pub vocab_mode: Option<VocabMode>,
    #[serde(alias = "min_prompt_chars")]
    pub min_prompt_chars: Option<usize>,
    #[serde(alias = "min_ascii_ratio")]
    pub min_ascii_ratio: Option<f64>,
}

impl ConfigFile {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    fn fusion(&self, args: &FusionArgs) -> CliResult<FusionConfig> {
        let d = FusionConfig::default();
        let cfg = FusionConfig {
            k: args.k.or(self.k).unwrap_or(d.k),
            w1: args.w1.or(self.w1).unwrap_or(d.w1),
            w2: args.w2.or(self.w2).unwrap_or(d.w2),
            normalize_components: !args.no_normalize_components
                && self.normalize_components.unwrap_or(d.normalize_components),
            normalize_output: !args.no_normalize_output && self.normalize_output.unwrap_or(d.normalize_output),
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    fn manifest(&self, flag: &Option<PathBuf>) -> CliResult<PathBuf> {
        flag.clone()
            .or_else(|| self.manifest.clone())
            .ok_or_else(|| CliError::Usage("--manifest is required".into()))
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cli: Cli) -> CliResult {
    let config = match &cli.config {
        Some(p) => ConfigFile::read(p)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Build(a) => cmd_build(&config, a),
        Command::IndexCheck(a) => cmd_index_check(&config, a),
        Command::Predict(a) => cmd_predict(&config, a),
        Command::Eval(a) => cmd_eval(&config, a),
        Command::Sweep(a) => cmd_sweep(&config, a),
        Command::Fixture(a) => cmd_fixture(a),
        Command::Serve(a) => cmd_serve(&config, a),
    }
}

fn load_index(manifest: &Path) -> CliResult<CorpusIndex> {
    let bundle = store::load_corpus(manifest)?;
    Ok(CorpusIndex::build(bundle)?)
}

fn write_stdout(text: &str) -> CliResult {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn cmd_build(config: &ConfigFile, a: BuildArgs) -> CliResult {
    let d = FilterConfig::default();
    let cfg = FilterConfig {
        dedup_threshold: a
            .dedup_threshold
            .or(config.dedup_threshold)
            .unwrap_or(d.dedup_threshold),
        vocab_threshold: a
            .vocab_threshold
            .or(config.vocab_threshold)
            .unwrap_or(d.vocab_threshold),
        vocab_mode: a.vocab_mode.or(config.vocab_mode).unwrap_or(d.vocab_mode),
        min_prompt_chars: a
            .min_prompt_chars
            .or(config.min_prompt_chars)
            .unwrap_or(d.min_prompt_chars),
        min_ascii_alpha_ratio: a
            .min_ascii_ratio
            .or(config.min_ascii_ratio)
            .unwrap_or(d.min_ascii_alpha_ratio),
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let vocab = match cfg.vocab_mode {
        VocabMode::Off => None,
        VocabMode::ExactMatch => match &a.vocab {
            Some(p) => Some(Vocabulary::read_terms(p)?),
            None => return Err(CliError::Usage("--vocab-mode exact_match needs --vocab".into())),
        },
        VocabMode::EmbeddingSimilarity => match (&a.vocab_embeddings, &a.term_embeddings, &a.terms) {
            (Some(v), Some(t), Some(names)) => {
                let names: Vec<String> = std::fs::read_to_string(names)?.lines().map(str::to_string).collect();
                Some(Vocabulary::from_embeddings(
                    &names,
                    read_embeddings(t)?,
                    read_embeddings(v)?,
                )?)
            }
            _ => {
                return Err(CliError::Usage(
                    "--vocab-mode embedding_similarity needs --vocab-embeddings, --term-embeddings and --terms".into(),
                ))
            }
        },
    };

    let raw = builder::read_raw_prompts(&a.prompts)?;
    let clip = read_embeddings(&a.clip)?;
    let sent = read_embeddings(&a.sent)?;
    let (manifest, mut report) = builder::build_corpus(raw, &clip, &sent, vocab.as_ref(), &cfg, &a.out_dir)?;
    if !a.timings {
        report.timings = None;
    }
    log::info!("wrote {} prompts to {}", manifest.count, a.out_dir.display());
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    match a.report {
        Some(p) => std::fs::write(p, text)?,
        None => write_stdout(&text)?,
    }
    Ok(())
}

fn cmd_index_check(config: &ConfigFile, a: ManifestArgs) -> CliResult {
    let path = config.manifest(&a.manifest)?;
    let bundle = store::load_corpus(&path)?;
    let manifest = bundle.manifest.clone();
    let index = CorpusIndex::build(bundle)?;
    let summary = serde_json::json!({
        "manifest": path.display().to_string(),
        "count": index.len(),
        "clip_dim": index.clip_dim(),
        "sent_dim": index.sent_dim(),
        "normalized": manifest.normalized,
        "provenance": manifest.provenance,
    });
    write_stdout(&format!("{summary}\n"))
}

fn cmd_predict(config: &ConfigFile, a: PredictArgs) -> CliResult {
    let fusion = config.fusion(&a.fusion)?;
    let index = load_index(&config.manifest(&a.manifest)?)?;
    let images = read_embeddings(&a.images)?;
    let captions = a.captions.as_ref().map(read_embeddings).transpose()?;
    let preds = predict_batch(&index, &images, captions.as_ref(), &fusion)?;
    let stacked = stack_predictions(&preds, index.sent_dim())?;
    write_embeddings_file(&stacked, &a.out)?;
    if let Some(path) = &a.neighbors_out {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (i, p) in preds.iter().enumerate() {
            let neighbors: Vec<_> = p
                .neighbors
                .neighbors
                .iter()
                .map(|n| serde_json::json!({ "row": n.row, "score": n.score }))
                .collect();
            writeln!(out, "{}", serde_json::json!({ "query": i, "neighbors": neighbors }))?;
        }
        out.flush()?;
    }
    log::info!("wrote {} predictions to {}", preds.len(), a.out.display());
    Ok(())
}

struct LoadedEval {
    index: CorpusIndex,
    queries: promptknn_core::EmbeddingMatrix,
    ground_truth: promptknn_core::EmbeddingMatrix,
    captions: Option<promptknn_core::EmbeddingMatrix>,
}

impl LoadedEval {
    fn load(config: &ConfigFile, a: &EvalInputs) -> CliResult<Self> {
        Ok(Self {
            index: load_index(&config.manifest(&a.manifest)?)?,
            queries: read_embeddings(&a.queries)?,
            ground_truth: read_embeddings(&a.ground_truth)?,
            captions: a.captions.as_ref().map(read_embeddings).transpose()?,
        })
    }

    fn set(&self) -> EvalSet<'_> {
        EvalSet {
            index: &self.index,
            queries: &self.queries,
            ground_truth: &self.ground_truth,
            captions: self.captions.as_ref(),
        }
    }
}

fn emit<T: serde::Serialize>(inputs: &EvalInputs, value: &T, table: String) -> CliResult {
    let mut json = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    json.push('\n');
    if let Some(p) = &inputs.out {
        std::fs::write(p, &json)?;
    }
    if inputs.json {
        write_stdout(&json)
    } else {
        write_stdout(&table)
    }
}

fn cmd_eval(config: &ConfigFile, a: EvalArgs) -> CliResult {
    let fusion = config.fusion(&a.fusion)?;
    let loaded = LoadedEval::load(config, &a.inputs)?;
    let variants: Vec<Variant> = if a.variants.is_empty() {
        let mut v = Vec::new();
        if loaded.captions.is_some() {
            v.push(Variant::caption_only());
        }
        v.extend([Variant::knn(1), Variant::knn(10), Variant::knn(100)]);
        if loaded.captions.is_some() {
            v.push(Variant::fused(fusion.k));
        }
        v
    } else {
        a.variants
            .iter()
            .map(|s| s.parse().map_err(|e: Error| CliError::Usage(e.to_string())))
            .collect::<CliResult<_>>()?
    };
    let rows = eval::compare_variants(&loaded.set(), &variants, &fusion)?;
    emit(&a.inputs, &rows, eval::render_table(&rows))
}

fn cmd_sweep(config: &ConfigFile, a: SweepArgs) -> CliResult {
    let fusion = config.fusion(&a.fusion)?;
    let loaded = LoadedEval::load(config, &a.inputs)?;
    let result = eval::sweep(&loaded.set(), &a.k_values, &a.w1_values, &fusion)?;
    let rows: Vec<_> = result.cells.iter().map(|c| c.summary.clone()).collect();
    let best = result.best_cell();
    let table = format!(
        "{}best: k={} w1={} w2={} mean={:.4}\n",
        eval::render_table(&rows),
        best.k,
        best.w1,
        best.w2,
        best.summary.mean_similarity
    );
    emit(&a.inputs, &result, table)
}

fn cmd_fixture(a: FixtureArgs) -> CliResult {
    let spec = SyntheticFixtureSpec {
        n_clusters: a.clusters,
        prompts_per_cluster: a.per_cluster,
        n_queries: a.queries,
        clip_dim: a.clip_dim,
        sent_dim: a.sent_dim,
        noise_sigma: a.noise,
        seed: a.seed,
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let fixture = eval::make_fixture(&spec)?;
    let paths = fixture.write(&a.out_dir)?;
    let mut summary = serde_json::json!({
        "manifest": paths.manifest.display().to_string(),
        "queries": paths.queries.display().to_string(),
        "ground_truth": paths.ground_truth.display().to_string(),
        "count": fixture.clip.rows(),
    });
    if let Some(sigma) = a.captions_noise {
        let captions = eval::noisy_captions(&fixture.ground_truth, sigma, spec.seed.wrapping_add(1))?;
        let p = a.out_dir.join("captions.emb");
        write_embeddings_file(&captions, &p)?;
        summary["captions"] = p.display().to_string().into();
    }
    write_stdout(&format!("{summary}\n"))
}

fn cmd_serve(config: &ConfigFile, a: ServeArgs) -> CliResult {
    let defaults = ServiceConfig::default();
    let cfg = ServiceConfig {
        bind: a.bind.or(config.bind).unwrap_or(defaults.bind),
        fusion: config.fusion(&a.fusion)?,
        max_body_bytes: a
            .max_body_bytes
            .or(config.max_body_bytes)
            .unwrap_or(defaults.max_body_bytes),
        request_timeout: a
            .timeout_secs
            .or(config.timeout_secs)
            .map(Duration::from_secs)
            .unwrap_or(defaults.request_timeout),
    };
    cfg.validate().map_err(CliError::Usage)?;
    // The corpus must load before the socket is bound.
    let index = load_index(&config.manifest(&a.manifest)?)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(service::serve(index, cfg))?;
    Ok(())
}
