//! Command-line interface: subcommand parsing, hyper-parameter resolution
//! (flags beat a config file, which beats the `CANWEAVE_SEED` environment
//! variable, which beats built-in defaults), artifact plumbing under an
//! output directory, and the exit-code contract (0 success, 1 runtime
//! failure, 2 usage error).

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::corpus::{encode_doc, load_raw_docs, Domain, RawDoc, Sample, Schema};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::report;
use crate::synth::{self, SynthSpec};
use crate::trainer::{Checkpoint, TrainConfig};

/// Every run echoes its fully resolved parameters into this file so the
/// exact invocation can be replayed later.
pub const RUNSPEC_FILE: &str = "runspec.json";
/// File a `train` run saves its model under.
pub const MODEL_CHECKPOINT_FILE: &str = "model.ckpt.json";
/// Environment variable consulted for the seed when neither a flag nor a
/// config file supplies one.
pub const SEED_ENV_VAR: &str = "CANWEAVE_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "canweave",
    version,
    about = "Cross-domain sentiment classifier with category memory and attention"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on a labeled source corpus plus an unlabeled target corpus.
    Train(TrainArgs),
    /// Score a saved model on a labeled dataset.
    Eval(EvalArgs),
    /// K-fold cross-validation: full source training per fold, held-out
    /// target folds for testing.
    Cv(CvArgs),
    /// Write memory interpretability reports from a saved model.
    #[command(name = "export-cmm", visible_alias = "extract-cmm")]
    ExportCmm(ExportCmmArgs),
    /// Render attention heatmaps for a dataset under a saved model.
    Heatmap(HeatmapArgs),
    /// Generate a paired synthetic source/target sentiment corpus.
    SynthData(SynthDataArgs),
}

/// Hyper-parameter flags shared by `train` and `cv`. Every flag is
/// optional; omitted values fall back to the config file, then the seed
/// environment variable (seed only), then built-in defaults.
#[derive(Debug, Default, Args)]
struct HyperArgs {
    /// Flat TOML config file (key = value); flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Memory entries per category (M).
    #[arg(long)]
    memory_size: Option<usize>,
    /// Queries matched per category per sample (K).
    #[arg(long)]
    matched_queries: Option<usize>,
    /// Weight of the attention-separation term.
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    /// Weight of the feature-alignment term.
    #[arg(long, allow_negative_numbers = true)]
    beta: Option<f64>,
    /// Embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Comma-separated ascending convolution widths, e.g. "3,4,5".
    #[arg(long)]
    widths: Option<String>,
    /// Convolution filters per width (T).
    #[arg(long = "filters-per-width", visible_alias = "filters")]
    filters_per_width: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fixed encoded sentence length; longer documents lose their tail.
    #[arg(long)]
    max_len: Option<usize>,
    /// Share of labeled data held out for model selection.
    #[arg(long, allow_negative_numbers = true)]
    val_fraction: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Labeled source corpus (label<TAB>text per line).
    #[arg(long)]
    source: PathBuf,
    /// Target corpus; plain text lines unless --target-labeled.
    #[arg(long)]
    target: PathBuf,
    /// Treat the target file as labeled; labels are stripped for training.
    #[arg(long)]
    target_labeled: bool,
    /// Pretrained embedding file (`count dim` header, one vector per line).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Model file written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled dataset to score.
    #[arg(long)]
    data: PathBuf,
    /// Which domain's memory the model consults.
    #[arg(long, value_enum, default_value_t = DomainArg::Target)]
    domain: DomainArg,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct CvArgs {
    /// Labeled source corpus.
    #[arg(long)]
    source: PathBuf,
    /// Labeled target corpus; folds are carved from it and its labels are
    /// used only on the held-out test portion.
    #[arg(long)]
    target: PathBuf,
    /// Pretrained embedding file (`count dim` header, one vector per line).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    /// At most this many folds run in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Debug, Args)]
struct ExportCmmArgs {
    /// Model file written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Vocabulary neighbors listed per memory slot.
    #[arg(long, default_value_t = 5)]
    neighbors: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct HeatmapArgs {
    /// Model file written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Documents to render; plain text lines unless --data-labeled.
    #[arg(long)]
    data: PathBuf,
    /// Treat the data file as labeled and carry labels into the report.
    #[arg(long)]
    data_labeled: bool,
    /// Which domain's memory the model consults.
    #[arg(long, value_enum, default_value_t = DomainArg::Target)]
    domain: DomainArg,
    /// Render at most this many documents.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SynthDataArgs {
    /// Total vocabulary size across all word groups.
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Shared sentiment words, split evenly between polarities.
    #[arg(long)]
    pivot_lexicon: Option<usize>,
    /// Domain-specific sentiment words per domain, split evenly.
    #[arg(long)]
    domain_lexicon: Option<usize>,
    #[arg(long)]
    docs_per_domain: Option<usize>,
    /// Tokens per document.
    #[arg(long)]
    doc_len: Option<usize>,
    /// How many tokens per document carry sentiment.
    #[arg(long)]
    sentiment_per_doc: Option<usize>,
    /// Probability a sentiment token is domain-specific instead of shared.
    #[arg(long, allow_negative_numbers = true)]
    shift_ratio: Option<f64>,
    /// Probability a sentiment token contradicts the document polarity.
    #[arg(long, allow_negative_numbers = true)]
    polarity_noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DomainArg {
    Source,
    Target,
}

impl DomainArg {
    fn to_domain(self) -> Domain {
        match self {
            DomainArg::Source => Domain::Source,
            DomainArg::Target => Domain::Target,
        }
    }
}

/// Fully resolved run parameters, echoed to `runspec.json` so a run can be
/// reproduced from its output directory alone.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunSpec {
    pub subcommand: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    pub out_dir: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_labeled: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_labeled: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub folds: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neighbors: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

#[derive(Debug, Serialize)]
struct TrainResults {
    val_accuracy: Vec<f64>,
    best_epoch: usize,
}

#[derive(Debug, Serialize)]
struct EvalResults {
    accuracy: f64,
}

/// Parses `argv` and executes the selected subcommand, translating the
/// outcome into the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap reports its own usage errors as 2 and --help/--version
            // as 0 through `exit_code`.
            let _ = err.print();
            return err.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(Error::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            2
        }
        Err(err) => {
            eprintln!("error: {err}");
            1
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => run_train(args),
        Command::Eval(args) => run_eval(args),
        Command::Cv(args) => run_cv(args),
        Command::ExportCmm(args) => run_export_cmm(args),
        Command::Heatmap(args) => run_heatmap(args),
        Command::SynthData(args) => run_synth_data(args),
    }
}

fn run_train(args: TrainArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out_dir)?;
    let pretrained = load_embeddings(args.embeddings.as_deref())?;
    let config = resolve_config(
        &args.hyper,
        pretrained.as_ref().map(|(_, dim)| *dim),
        env_seed()?,
    )?;
    let spec = RunSpec {
        subcommand: "train".into(),
        config: Some(config.clone()),
        source: Some(display(&args.source)),
        target: Some(display(&args.target)),
        embeddings: args.embeddings.as_deref().map(display),
        target_labeled: Some(args.target_labeled),
        out_dir: display(&args.out_dir),
        ..RunSpec::default()
    };
    write_runspec(&spec, &args.out_dir)?;

    let source = load_raw_docs(&args.source, Schema::Labeled)?;
    let target_schema = if args.target_labeled {
        Schema::Labeled
    } else {
        Schema::Unlabeled
    };
    let target = load_raw_docs(&args.target, target_schema)?;
    let (model, history) = report::train_full(
        &source,
        &target,
        pretrained.as_ref().map(|(map, _)| map),
        &config,
    )?;

    Checkpoint::capture(&model, &config).save(&args.out_dir.join(MODEL_CHECKPOINT_FILE))?;
    report::write_training_log(&history, &args.out_dir)?;
    report::write_results(
        &TrainResults {
            val_accuracy: history.val_accuracy.clone(),
            best_epoch: history.best_epoch,
        },
        &args.out_dir,
    )?;
    let best = history
        .val_accuracy
        .get(history.best_epoch)
        .copied()
        .unwrap_or(f64::NAN);
    println!(
        "trained {} epochs; best validation accuracy {:.4} at epoch {}",
        config.epochs, best, history.best_epoch
    );
    Ok(())
}

fn run_eval(args: EvalArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out_dir)?;
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let model = checkpoint.rebuild()?;
    let spec = RunSpec {
        subcommand: "eval".into(),
        config: Some(checkpoint.config.clone()),
        checkpoint: Some(display(&args.checkpoint)),
        data: Some(display(&args.data)),
        domain: Some(args.domain.to_domain().to_string()),
        out_dir: display(&args.out_dir),
        ..RunSpec::default()
    };
    write_runspec(&spec, &args.out_dir)?;

    let docs = load_raw_docs(&args.data, Schema::Labeled)?;
    let samples = encode_all(
        &docs,
        &model,
        checkpoint.config.max_len,
        args.domain.to_domain(),
    );
    let accuracy = report::evaluate(&model, &samples)?;
    report::write_results(&EvalResults { accuracy }, &args.out_dir)?;
    println!("accuracy {:.4} on {} documents", accuracy, samples.len());
    Ok(())
}

fn run_cv(args: CvArgs) -> Result<()> {
    if args.folds < 2 {
        return Err(Error::Usage("--folds must be at least 2".into()));
    }
    if args.jobs == 0 {
        return Err(Error::Usage("--jobs must be positive".into()));
    }
    std::fs::create_dir_all(&args.out_dir)?;
    let pretrained = load_embeddings(args.embeddings.as_deref())?;
    let config = resolve_config(
        &args.hyper,
        pretrained.as_ref().map(|(_, dim)| *dim),
        env_seed()?,
    )?;
    let spec = RunSpec {
        subcommand: "cv".into(),
        config: Some(config.clone()),
        source: Some(display(&args.source)),
        target: Some(display(&args.target)),
        embeddings: args.embeddings.as_deref().map(display),
        folds: Some(args.folds),
        jobs: Some(args.jobs),
        out_dir: display(&args.out_dir),
        ..RunSpec::default()
    };
    write_runspec(&spec, &args.out_dir)?;

    let source = load_raw_docs(&args.source, Schema::Labeled)?;
    let target = load_raw_docs(&args.target, Schema::Labeled)?;
    let result = report::cross_validate(
        &source,
        &target,
        pretrained.as_ref().map(|(map, _)| map),
        &config,
        args.folds,
        args.jobs,
        Some(&args.out_dir),
    )?;
    report::write_results(&result, &args.out_dir)?;
    println!(
        "mean target accuracy {:.4} (std {:.4}) over {} folds",
        result.mean, result.std, args.folds
    );
    Ok(())
}

fn run_export_cmm(args: ExportCmmArgs) -> Result<()> {
    if args.neighbors == 0 {
        return Err(Error::Usage("--neighbors must be positive".into()));
    }
    std::fs::create_dir_all(&args.out_dir)?;
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let model = checkpoint.rebuild()?;
    let spec = RunSpec {
        subcommand: "export-cmm".into(),
        checkpoint: Some(display(&args.checkpoint)),
        neighbors: Some(args.neighbors),
        out_dir: display(&args.out_dir),
        ..RunSpec::default()
    };
    write_runspec(&spec, &args.out_dir)?;
    report::emit_cmm_report(&model, args.neighbors, &args.out_dir)?;
    println!(
        "wrote {} and {}",
        report::CMM_NEIGHBORS_FILE,
        report::SOURCE_MEMORY_FILE
    );
    Ok(())
}

fn run_heatmap(args: HeatmapArgs) -> Result<()> {
    if args.limit == Some(0) {
        return Err(Error::Usage("--limit must be positive when given".into()));
    }
    std::fs::create_dir_all(&args.out_dir)?;
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let model = checkpoint.rebuild()?;
    let spec = RunSpec {
        subcommand: "heatmap".into(),
        checkpoint: Some(display(&args.checkpoint)),
        data: Some(display(&args.data)),
        data_labeled: Some(args.data_labeled),
        domain: Some(args.domain.to_domain().to_string()),
        limit: args.limit,
        out_dir: display(&args.out_dir),
        ..RunSpec::default()
    };
    write_runspec(&spec, &args.out_dir)?;

    let schema = if args.data_labeled {
        Schema::Labeled
    } else {
        Schema::Unlabeled
    };
    let mut docs = load_raw_docs(&args.data, schema)?;
    if let Some(limit) = args.limit {
        docs.truncate(limit);
    }
    let samples = encode_all(
        &docs,
        &model,
        checkpoint.config.max_len,
        args.domain.to_domain(),
    );
    report::emit_heatmap(&model, &samples, &args.out_dir)?;
    println!(
        "rendered {} documents into {}",
        samples.len(),
        report::HEATMAP_FILE
    );
    Ok(())
}

fn run_synth_data(args: SynthDataArgs) -> Result<()> {
    let mut spec = SynthSpec::default();
    if let Some(seed) = env_seed()? {
        spec.seed = seed;
    }
    if let Some(v) = args.vocab_size {
        spec.vocab_size = v;
    }
    if let Some(v) = args.pivot_lexicon {
        spec.pivot_lexicon = v;
    }
    if let Some(v) = args.domain_lexicon {
        spec.domain_lexicon = v;
    }
    if let Some(v) = args.docs_per_domain {
        spec.docs_per_domain = v;
    }
    if let Some(v) = args.doc_len {
        spec.doc_len = v;
    }
    if let Some(v) = args.sentiment_per_doc {
        spec.sentiment_per_doc = v;
    }
    if let Some(v) = args.shift_ratio {
        spec.shift_ratio = v;
    }
    if let Some(v) = args.polarity_noise {
        spec.polarity_noise = v;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    spec.validate().map_err(as_usage)?;

    std::fs::create_dir_all(&args.out_dir)?;
    let run_spec = RunSpec {
        subcommand: "synth-data".into(),
        synth: Some(spec.clone()),
        out_dir: display(&args.out_dir),
        ..RunSpec::default()
    };
    write_runspec(&run_spec, &args.out_dir)?;

    let corpus = synth::generate(&spec)?;
    synth::write_corpus(&corpus, &args.out_dir)?;
    println!(
        "wrote {}, {}, {}",
        synth::SOURCE_FILE,
        synth::TARGET_FILE,
        synth::LEXICON_FILE
    );
    Ok(())
}

/// Reads the seed environment variable; unset or blank means "not given".
fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV_VAR) {
        Ok(text) => {
            let trimmed = text.trim();
            if trimmed.is_empty() {
                return Ok(None);
            }
            trimmed.parse::<u64>().map(Some).map_err(|_| {
                Error::Usage(format!(
                    "{SEED_ENV_VAR} must be a non-negative integer, got `{text}`"
                ))
            })
        }
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(std::env::VarError::NotUnicode(_)) => {
            Err(Error::Usage(format!("{SEED_ENV_VAR} is not valid UTF-8")))
        }
    }
}

/// Hyper-parameters being assembled; `None` means "not given yet" so each
/// resolution layer only fills gaps left by stronger layers.
#[derive(Debug, Clone, Default)]
struct ConfigDraft {
    memory_size: Option<usize>,
    matched_queries: Option<usize>,
    alpha: Option<f64>,
    beta: Option<f64>,
    dim: Option<usize>,
    widths: Option<Vec<usize>>,
    filters_per_width: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    seed: Option<u64>,
    max_len: Option<usize>,
    val_fraction: Option<f64>,
}

impl ConfigDraft {
    fn finalize(self) -> TrainConfig {
        let base = TrainConfig::default();
        TrainConfig {
            memory_size: self.memory_size.unwrap_or(base.memory_size),
            matched_queries: self.matched_queries.unwrap_or(base.matched_queries),
            alpha: self.alpha.unwrap_or(base.alpha),
            beta: self.beta.unwrap_or(base.beta),
            dim: self.dim.unwrap_or(base.dim),
            widths: self.widths.unwrap_or(base.widths),
            filters_per_width: self.filters_per_width.unwrap_or(base.filters_per_width),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            epochs: self.epochs.unwrap_or(base.epochs),
            seed: self.seed.unwrap_or(base.seed),
            max_len: self.max_len.unwrap_or(base.max_len),
            val_fraction: self.val_fraction.unwrap_or(base.val_fraction),
        }
    }
}

/// Builds the effective config: environment seed, then config file, then
/// flags, each layer overriding the previous. When an embedding file is
/// supplied its dimension fills an unset `dim` and must agree with an
/// explicitly requested one.
fn resolve_config(
    hyper: &HyperArgs,
    embedding_dim: Option<usize>,
    env_seed: Option<u64>,
) -> Result<TrainConfig> {
    let mut draft = ConfigDraft {
        seed: env_seed,
        ..ConfigDraft::default()
    };
    if let Some(path) = &hyper.config {
        apply_config_file(&mut draft, path)?;
    }
    apply_flags(&mut draft, hyper)?;
    if let Some(dim) = embedding_dim {
        match draft.dim {
            None => draft.dim = Some(dim),
            Some(requested) if requested != dim => {
                return Err(Error::Usage(format!(
                    "requested dimension {requested} conflicts with the \
                     embedding file's dimension {dim}"
                )));
            }
            Some(_) => {}
        }
    }
    let config = draft.finalize();
    config.validate().map_err(as_usage)?;
    Ok(config)
}

fn apply_flags(draft: &mut ConfigDraft, hyper: &HyperArgs) -> Result<()> {
    if let Some(v) = hyper.memory_size {
        draft.memory_size = Some(v);
    }
    if let Some(v) = hyper.matched_queries {
        draft.matched_queries = Some(v);
    }
    if let Some(v) = hyper.alpha {
        draft.alpha = Some(v);
    }
    if let Some(v) = hyper.beta {
        draft.beta = Some(v);
    }
    if let Some(v) = hyper.dim {
        draft.dim = Some(v);
    }
    if let Some(text) = &hyper.widths {
        draft.widths = Some(parse_widths(text)?);
    }
    if let Some(v) = hyper.filters_per_width {
        draft.filters_per_width = Some(v);
    }
    if let Some(v) = hyper.batch_size {
        draft.batch_size = Some(v);
    }
    if let Some(v) = hyper.learning_rate {
        draft.learning_rate = Some(v);
    }
    if let Some(v) = hyper.epochs {
        draft.epochs = Some(v);
    }
    if let Some(v) = hyper.seed {
        draft.seed = Some(v);
    }
    if let Some(v) = hyper.max_len {
        draft.max_len = Some(v);
    }
    if let Some(v) = hyper.val_fraction {
        draft.val_fraction = Some(v);
    }
    Ok(())
}

fn apply_config_file(draft: &mut ConfigDraft, path: &Path) -> Result<()> {
    let text = crate::error::read_file(path)?;
    let table: toml::Table = text
        .parse()
        .map_err(|err| Error::Usage(format!("config {}: {err}", path.display())))?;
    for (key, value) in &table {
        match key.as_str() {
            "memory_size" => draft.memory_size = Some(index_value(key, value)?),
            "matched_queries" => draft.matched_queries = Some(index_value(key, value)?),
            "alpha" => draft.alpha = Some(float_value(key, value)?),
            "beta" => draft.beta = Some(float_value(key, value)?),
            "dim" => draft.dim = Some(index_value(key, value)?),
            "widths" => draft.widths = Some(widths_value(value)?),
            "filters_per_width" => draft.filters_per_width = Some(index_value(key, value)?),
            "batch_size" => draft.batch_size = Some(index_value(key, value)?),
            "learning_rate" => draft.learning_rate = Some(float_value(key, value)?),
            "epochs" => draft.epochs = Some(index_value(key, value)?),
            "seed" => draft.seed = Some(seed_value(key, value)?),
            "max_len" => draft.max_len = Some(index_value(key, value)?),
            "val_fraction" => draft.val_fraction = Some(float_value(key, value)?),
            other => {
                return Err(Error::Usage(format!(
                    "unknown config key `{other}` in {}",
                    path.display()
                )));
            }
        }
    }
    Ok(())
}

fn index_value(key: &str, value: &toml::Value) -> Result<usize> {
    let raw = value
        .as_integer()
        .ok_or_else(|| Error::Usage(format!("config key `{key}` must be an integer")))?;
    usize::try_from(raw)
        .map_err(|_| Error::Usage(format!("config key `{key}` must be non-negative")))
}

fn seed_value(key: &str, value: &toml::Value) -> Result<u64> {
    let raw = value
        .as_integer()
        .ok_or_else(|| Error::Usage(format!("config key `{key}` must be an integer")))?;
    u64::try_from(raw)
        .map_err(|_| Error::Usage(format!("config key `{key}` must be non-negative")))
}

fn float_value(key: &str, value: &toml::Value) -> Result<f64> {
    match value {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::Usage(format!("config key `{key}` must be a number"))),
    }
}

fn widths_value(value: &toml::Value) -> Result<Vec<usize>> {
    match value {
        toml::Value::Array(items) => items
            .iter()
            .map(|item| index_value("widths", item))
            .collect(),
        toml::Value::String(text) => parse_widths(text),
        _ => Err(Error::Usage(
            "config key `widths` must be an array or a comma-separated string".into(),
        )),
    }
}

fn parse_widths(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|piece| {
            piece.trim().parse::<usize>().map_err(|_| {
                Error::Usage(format!(
                    "widths must be comma-separated integers, got `{piece}`"
                ))
            })
        })
        .collect()
}

/// Downgrades a validation failure to a usage error so it exits with 2.
fn as_usage(err: Error) -> Error {
    match err {
        Error::InvalidInput(msg) => Error::Usage(msg),
        other => other,
    }
}

fn display(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

fn write_runspec(spec: &RunSpec, out_dir: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(spec)?;
    std::fs::write(out_dir.join(RUNSPEC_FILE), json)?;
    Ok(())
}

type Pretrained = (HashMap<String, Vec<f64>>, usize);

fn load_embeddings(path: Option<&Path>) -> Result<Option<Pretrained>> {
    match path {
        Some(path) => Ok(Some(crate::embeddings::load_pretrained(path)?)),
        None => Ok(None),
    }
}

fn encode_all(docs: &[RawDoc], model: &Model, max_len: usize, domain: Domain) -> Vec<Sample> {
    docs.iter()
        .map(|doc| encode_doc(doc, &model.vocab, max_len, domain))
        .collect()
}
