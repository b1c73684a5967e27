//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage error, 3 data or format error, 4 internal
//! invariant violation.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::classifier::{self, Head};
use crate::config::{PipelineConfig, PoolPolicy, PrototypeSource, RunConfig};
use crate::error::Error;
use crate::harness::{self, EvalReport};
use crate::prompt::PromptTemplate;
use crate::prototype::{self, PrototypeSet, DEFAULT_K};
use crate::store::{self, EmbeddingTable};
use crate::synth::{self, SynthSpec};

pub const THREADS_ENV: &str = "PROTO_ANCHOR_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "proto-anchor", version, about = "Text-anchored prototypical audio classification over precomputed embeddings")]
pub struct Cli {
    /// Worker threads (default: available parallelism). PROTO_ANCHOR_THREADS overrides.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build prototypes from text anchors and an audio pool.
    Build(BuildArgs),
    /// Score query embeddings against saved prototypes.
    Classify(ClassifyArgs),
    /// Evaluate a prototypical head over folds or a train/test split.
    Eval(EvalArgs),
    /// Evaluate the zero-shot head (text anchors used directly).
    Zeroshot(ZeroshotArgs),
    /// Sweep cluster size or prompt template, writing a CSV table.
    Sweep(SweepArgs),
    /// Generate a synthetic embedding task.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum HeadArg {
    Single,
    Multi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    Acc,
    Map,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PoolArg {
    TrainFoldsOnly,
    AllAudio,
}

impl From<PoolArg> for PoolPolicy {
    fn from(p: PoolArg) -> Self {
        match p {
            PoolArg::TrainFoldsOnly => PoolPolicy::TrainFoldsOnly,
            PoolArg::AllAudio => PoolPolicy::AllAudio,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepMode {
    K,
    Prompt,
}

#[derive(Debug, Args)]
struct TablePaths {
    /// Audio embeddings (EMBT).
    #[arg(long)]
    audio: PathBuf,
    /// Audio metadata (JSONL); defaults to the audio path with a .jsonl extension.
    #[arg(long)]
    audio_meta: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[command(flatten)]
    audio: TablePaths,
    /// Text anchor embeddings (EMBT); ids become class names.
    #[arg(long)]
    text: PathBuf,
    #[arg(long)]
    text_meta: Option<PathBuf>,
    /// Cluster size.
    #[arg(long, default_value_t = DEFAULT_K as u64, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    /// Group audio by ground-truth labels instead of retrieving clusters.
    #[arg(long)]
    supervised: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    out_meta: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ClassifyArgs {
    #[arg(long)]
    protos: PathBuf,
    #[arg(long)]
    protos_meta: Option<PathBuf>,
    #[arg(long)]
    query: PathBuf,
    #[arg(long)]
    query_meta: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = HeadArg::Single)]
    head: HeadArg,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Predictions JSONL.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalCommon {
    #[command(flatten)]
    audio: TablePaths,
    #[arg(long)]
    text: PathBuf,
    #[arg(long)]
    text_meta: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = HeadArg::Single)]
    head: HeadArg,
    /// Must agree with the head: acc for single, map for multi.
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
    #[arg(long, value_enum, default_value_t = PoolArg::TrainFoldsOnly)]
    pool: PoolArg,
    /// Recorded in the report; evaluation itself is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Report JSON.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    common: EvalCommon,
    #[arg(long, default_value_t = DEFAULT_K as u64, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long)]
    supervised: bool,
}

#[derive(Debug, Args)]
struct ZeroshotArgs {
    #[command(flatten)]
    common: EvalCommon,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    mode: SweepMode,
    #[command(flatten)]
    audio: TablePaths,
    /// Text anchors (k mode).
    #[arg(long)]
    text: Option<PathBuf>,
    #[arg(long)]
    text_meta: Option<PathBuf>,
    /// Comma-separated cluster sizes.
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u64).range(1..))]
    k_values: Vec<u64>,
    /// Inclusive range start:end:step.
    #[arg(long)]
    k_range: Option<String>,
    /// Cluster size for prompt mode.
    #[arg(long, default_value_t = DEFAULT_K as u64, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    /// Embeddings keyed by rendered prompt (prompt mode).
    #[arg(long)]
    lookup: Option<PathBuf>,
    #[arg(long)]
    lookup_meta: Option<PathBuf>,
    /// Template, optionally prefixed with a case mode: `lowercase:This is {}`.
    #[arg(long = "template")]
    templates: Vec<String>,
    /// Add the five standard prompt formulations.
    #[arg(long)]
    standard_prompts: bool,
    /// Comma-separated class labels; defaults to audio labels in first-seen order.
    #[arg(long, value_delimiter = ',')]
    labels: Vec<String>,
    /// Use the zero-shot head instead of prototypes.
    #[arg(long)]
    zeroshot: bool,
    #[arg(long, value_enum, default_value_t = HeadArg::Single)]
    head: HeadArg,
    #[arg(long, value_enum, default_value_t = PoolArg::TrainFoldsOnly)]
    pool: PoolArg,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long)]
    out_csv: PathBuf,
    /// JSON report with the run configuration; defaults to the CSV path with a .json extension.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 0.3)]
    audio_noise: f64,
    #[arg(long, default_value_t = 0.6)]
    anchor_noise: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    overlap: f64,
    #[arg(long, default_value_t = 5)]
    folds: u32,
    /// Output files are `<prefix>audio.embt`, `<prefix>text.embt`, ... plus `<prefix>manifest.json`.
    #[arg(long)]
    out_prefix: String,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Lib(Error::Invariant(_)) => EXIT_INTERNAL,
            CliError::Lib(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let threads = match thread_count(cli.threads) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("proto-anchor: {e}");
            return e.exit_code();
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("proto-anchor: cannot start worker pool: {e}");
            return EXIT_INTERNAL;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("proto-anchor: {e}");
            e.exit_code()
        }
    }
}

fn thread_count(flag: Option<usize>) -> CliResult<Option<usize>> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
            CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))
        })?),
        Err(_) => flag,
    };
    match n {
        Some(0) => usage("thread count must be positive"),
        other => Ok(other),
    }
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Build(a) => cmd_build(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Zeroshot(a) => cmd_zeroshot(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn meta_or_default(meta: &Option<PathBuf>, matrix: &Path) -> PathBuf {
    meta.clone().unwrap_or_else(|| store::sidecar_path(matrix))
}

fn load(matrix: &Path, meta: &Option<PathBuf>) -> CliResult<(EmbeddingTable, PathBuf)> {
    let meta = meta_or_default(meta, matrix);
    Ok((store::load_table(matrix, &meta)?, meta))
}

fn check_temperature(t: f64) -> CliResult {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        usage(format!("--temperature must be positive, got {t}"))
    }
}

fn cmd_build(a: BuildArgs) -> CliResult {
    let (audio, audio_meta) = load(&a.audio.audio, &a.audio.audio_meta)?;
    let (text, text_meta) = load(&a.text, &a.text_meta)?;
    let k = a.k as usize;
    let (protos, source) = if a.supervised {
        let names: Vec<String> = text.ids().map(str::to_owned).collect();
        (prototype::build_supervised(&audio, &names)?, PrototypeSource::Supervised)
    } else {
        (prototype::build_text_anchored(&text, &audio, k)?, PrototypeSource::TextAnchored)
    };
    let config = RunConfig::new("build")
        .file("audio", &a.audio.audio)
        .file("audio_meta", &audio_meta)
        .file("text", &a.text)
        .file("text_meta", &text_meta)
        .param("k", k)
        .param("prototypes", serde_json::to_value(source).expect("enum serializes"));
    let out_meta = meta_or_default(&a.out_meta, &a.out);
    protos.save(&a.out, &out_meta, Some(&config))?;
    Ok(())
}

fn cmd_classify(a: ClassifyArgs) -> CliResult {
    check_temperature(a.temperature)?;
    let protos_meta = meta_or_default(&a.protos_meta, &a.protos);
    let protos = PrototypeSet::load(&a.protos, &protos_meta)?;
    let (queries, query_meta) = load(&a.query, &a.query_meta)?;
    let config = RunConfig::new("classify")
        .file("protos", &a.protos)
        .file("protos_meta", &protos_meta)
        .file("query", &a.query)
        .file("query_meta", &query_meta)
        .param("head", if a.head == HeadArg::Single { "single" } else { "multi" })
        .param("temperature", a.temperature);
    match a.head {
        HeadArg::Single => {
            let (labels, scores) = classifier::classify_single(&queries, &protos, a.temperature)?;
            classifier::write_predictions(&a.out, &scores, Some(&labels), Some(&config))?;
        }
        HeadArg::Multi => {
            let scores = classifier::score_multi(&queries, &protos)?;
            classifier::write_predictions(&a.out, &scores, None, Some(&config))?;
        }
    }
    Ok(())
}

fn resolve_head(head: HeadArg, zeroshot: bool, metric: Option<MetricArg>) -> CliResult<Head> {
    let h = match (head, zeroshot) {
        (HeadArg::Single, false) => Head::ProtoSingle,
        (HeadArg::Multi, false) => Head::ProtoMulti,
        (HeadArg::Single, true) => Head::ZeroshotSingle,
        (HeadArg::Multi, true) => Head::ZeroshotMulti,
    };
    match (metric, h.is_single()) {
        (Some(MetricArg::Map), true) => usage("--metric map requires --head multi"),
        (Some(MetricArg::Acc), false) => usage("--metric acc requires --head single"),
        _ => Ok(h),
    }
}

fn evaluate(c: EvalCommon, cfg: PipelineConfig, command: &str) -> CliResult {
    check_temperature(c.temperature)?;
    let (audio, audio_meta) = load(&c.audio.audio, &c.audio.audio_meta)?;
    let (text, text_meta) = load(&c.text, &c.text_meta)?;
    let mut report = harness::run_pipeline(&audio, &text, &cfg)?;
    report.config = RunConfig {
        seed: Some(c.seed),
        ..RunConfig::new(command)
    }
    .file("audio", &c.audio.audio)
    .file("audio_meta", &audio_meta)
    .file("text", &c.text)
    .file("text_meta", &text_meta);
    report.config.pipeline = Some(cfg);
    report.write(&c.report)?;
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult {
    let c = a.common;
    let cfg = PipelineConfig {
        k: a.k as usize,
        head: resolve_head(c.head, false, c.metric)?,
        pool_policy: c.pool.into(),
        prototypes: if a.supervised {
            PrototypeSource::Supervised
        } else {
            PrototypeSource::TextAnchored
        },
        temperature: c.temperature,
    };
    evaluate(c, cfg, "eval")
}

fn cmd_zeroshot(a: ZeroshotArgs) -> CliResult {
    let c = a.common;
    let cfg = PipelineConfig {
        head: resolve_head(c.head, true, c.metric)?,
        pool_policy: c.pool.into(),
        temperature: c.temperature,
        ..PipelineConfig::default()
    };
    evaluate(c, cfg, "zeroshot")
}

fn parse_k_range(s: &str) -> CliResult<Vec<usize>> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums: Result<Vec<usize>, _> = parts.iter().map(|p| p.trim().parse::<usize>()).collect();
    match (parts.len(), nums) {
        (3, Ok(n)) if n[0] >= 1 && n[2] >= 1 && n[0] <= n[1] => {
            Ok((n[0]..=n[1]).step_by(n[2]).collect())
        }
        _ => usage(format!("--k-range expects start:end:step with 1 <= start <= end, step >= 1; got {s:?}")),
    }
}

#[derive(Serialize)]
struct SweepRow {
    key: String,
    metric: f64,
}

#[derive(Serialize)]
struct SweepReport {
    config: RunConfig,
    rows: Vec<SweepRow>,
}

fn cmd_sweep(a: SweepArgs) -> CliResult {
    check_temperature(a.temperature)?;
    let (audio, audio_meta) = load(&a.audio.audio, &a.audio.audio_meta)?;
    let mut cfg = PipelineConfig {
        k: a.k as usize,
        head: resolve_head(a.head, a.zeroshot, None)?,
        pool_policy: a.pool.into(),
        prototypes: PrototypeSource::TextAnchored,
        temperature: a.temperature,
    };
    let mut config = RunConfig::new("sweep")
        .file("audio", &a.audio.audio)
        .file("audio_meta", &audio_meta);

    let (csv_text, rows) = match a.mode {
        SweepMode::K => {
            let text_path = match &a.text {
                Some(p) => p,
                None => return usage("--mode k requires --text"),
            };
            let mut ks: Vec<usize> = a.k_values.iter().map(|&k| k as usize).collect();
            if let Some(r) = &a.k_range {
                ks.extend(parse_k_range(r)?);
            }
            if ks.is_empty() {
                return usage("--mode k requires --k-values or --k-range");
            }
            let (text, text_meta) = load(text_path, &a.text_meta)?;
            let rows = harness::sweep_k(&audio, &text, &ks, &cfg)?;
            config = config
                .file("text", text_path)
                .file("text_meta", &text_meta)
                .param("mode", "k")
                .param("k_values", rows.iter().map(|r| r.0).collect::<Vec<_>>());
            (
                harness::k_sweep_csv(&rows)?,
                rows.iter()
                    .map(|(k, m)| SweepRow { key: k.to_string(), metric: *m })
                    .collect::<Vec<_>>(),
            )
        }
        SweepMode::Prompt => {
            let lookup_path = match &a.lookup {
                Some(p) => p,
                None => return usage("--mode prompt requires --lookup"),
            };
            let mut templates = Vec::new();
            if a.standard_prompts {
                templates.extend(PromptTemplate::standard_set());
            }
            for t in &a.templates {
                templates.push(t.parse::<PromptTemplate>().map_err(|e| CliError::Usage(e.to_string()))?);
            }
            if templates.is_empty() {
                return usage("--mode prompt requires --template or --standard-prompts");
            }
            let labels = if a.labels.is_empty() {
                first_seen_labels(&audio)
            } else {
                a.labels.clone()
            };
            if labels.is_empty() {
                return usage("no class labels given and none found in audio metadata");
            }
            let (lookup_table, lookup_meta) = load(lookup_path, &a.lookup_meta)?;
            let lookup = harness::lookup_from_table(&lookup_table);
            cfg.k = a.k as usize;
            let rows = harness::sweep_prompts(&audio, &labels, &templates, &lookup, &cfg)?;
            config = config
                .file("lookup", lookup_path)
                .file("lookup_meta", &lookup_meta)
                .param("mode", "prompt")
                .param("labels", labels)
                .param(
                    "templates",
                    serde_json::to_value(&templates).expect("templates serialize"),
                );
            (
                harness::prompt_sweep_csv(&rows)?,
                rows.iter()
                    .map(|(t, m)| SweepRow { key: t.display_key(), metric: *m })
                    .collect(),
            )
        }
    };
    config.pipeline = Some(cfg);
    fs::write(&a.out_csv, csv_text).map_err(|e| Error::io(&a.out_csv, e))?;
    let report_path = a.report.unwrap_or_else(|| a.out_csv.with_extension("json"));
    let mut json = serde_json::to_string_pretty(&SweepReport { config, rows })
        .map_err(|e| Error::Invariant(format!("sweep report: {e}")))?;
    json.push('\n');
    fs::write(&report_path, json).map_err(|e| Error::io(&report_path, e))?;
    Ok(())
}

fn first_seen_labels(audio: &EmbeddingTable) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for m in audio.meta() {
        for l in m.labels.iter().flatten() {
            if !out.contains(l) {
                out.push(l.clone());
            }
        }
    }
    out
}

#[derive(Serialize)]
struct SynthManifest {
    config: RunConfig,
    /// File name to SHA-256 of its bytes.
    sha256: std::collections::BTreeMap<String, String>,
}

fn cmd_synth(a: SynthArgs) -> CliResult {
    let spec = SynthSpec {
        n_classes: a.classes,
        dim: a.dim,
        per_class: a.per_class,
        audio_noise: a.audio_noise,
        anchor_noise: a.anchor_noise,
        seed: a.seed,
        multilabel_overlap: a.overlap,
        folds: a.folds,
    };
    if let Err(e) = spec.validate() {
        return usage(e.to_string());
    }
    let data = synth::generate_synthetic(&spec)?;
    let mut sha256 = std::collections::BTreeMap::new();
    for (name, table) in [("audio", &data.audio), ("text", &data.text), ("means", &data.means)] {
        let matrix = PathBuf::from(format!("{}{name}.embt", a.out_prefix));
        let meta = store::sidecar_path(&matrix);
        store::write_table(table, &matrix, &meta)?;
        for p in [matrix, meta] {
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let file_name = p
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default();
            sha256.insert(file_name, hex::encode(Sha256::digest(&bytes)));
        }
    }
    let config = RunConfig {
        seed: Some(spec.seed),
        synth: Some(spec),
        ..RunConfig::new("synth")
    };
    let manifest_path = PathBuf::from(format!("{}manifest.json", a.out_prefix));
    let mut json = serde_json::to_string_pretty(&SynthManifest { config, sha256 })
        .map_err(|e| Error::Invariant(format!("manifest: {e}")))?;
    json.push('\n');
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(())
}

/// Reads a report written by `eval`, `zeroshot` or the library.
pub fn read_report(path: impl AsRef<Path>) -> crate::error::Result<EvalReport> {
    EvalReport::read(path)
}
