//! Pipeline front-end. Every subcommand reads and writes artifacts inside
//! a run directory and keeps a manifest of SHA-256 digests so steps from
//! different runs cannot be mixed. Logs go to standard error; data only to
//! files.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use morphclass::augment::{
    default_miniparadigms, file_backed_generator, generate_forms, load_entries, save_entries,
};
use morphclass::corpus::{
    clean, load_lexemes, save_lexemes, stratified_split, CleaningConfig, SplitSpec,
};
use morphclass::eval::{
    build_report, entries_to_examples, evaluate_model, sweep_forms, sweep_to_csv, write_report,
    MaskingMode, ModelScorer,
};
use morphclass::labels::LabelSpace;
use morphclass::manifest::{PipelineManifest, MANIFEST_FILE};
use morphclass::model::{Checkpoint, ModelConfig, TransformerClassifier};
use morphclass::train::{
    history_to_jsonl, load_examples, save_examples, train_with_progress, SchedulerSpec,
    TrainConfig,
};
use morphclass::{bpe, synth, Error, Result};

#[derive(Parser)]
#[command(
    name = "morphclass",
    version,
    about = "Multi-task POS and inflection-class classification pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with a known rule system
    Synth(SynthArgs),
    /// Clean and filter a lexeme TSV
    Prepare(PrepareArgs),
    /// Stratified train/test split of a cleaned lexeme TSV
    Split(SplitArgs),
    /// Attach miniparadigm forms to every record
    Augment(AugmentArgs),
    /// Train the subword tokenizer on assembled inputs
    TrainBpe(TrainBpeArgs),
    /// Tokenize inputs and encode labels into model-ready examples
    Encode(EncodeArgs),
    /// Train the classifier
    Train(TrainArgs),
    /// Score a checkpoint on encoded examples
    Evaluate(EvaluateArgs),
    /// Measure accuracy as a function of visible form count
    Sweep(SweepArgs),
    /// Run the six-row scheduler/architecture grid
    Grid(GridArgs),
}

// ── shared plumbing ─────────────────────────────────────────────────────

fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}

/// Fail with a pointer to the producing command when an input is absent.
fn require(path: &Path, produced_by: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::Data(format!(
            "missing artifact {}; run `morphclass {produced_by}` first",
            path.display()
        )));
    }
    Ok(())
}

/// Verify a consumed artifact against the manifest, or adopt it if this is
/// the first command to see it (hand-supplied inputs).
fn check_or_adopt(manifest: &mut PipelineManifest, name: &str, path: &Path) -> Result<()> {
    if manifest.artifacts.contains_key(name) {
        manifest.verify_file(name, path)
    } else {
        manifest.record_file(name, path)
    }
}

fn artifact_name(dir: &Path, path: &Path) -> String {
    path.strip_prefix(dir)
        .map(|p| p.to_string_lossy().into_owned())
        .unwrap_or_else(|_| {
            path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
        })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::io_context(format!("cannot create {}", dir.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)
        .map_err(|e| Error::io_context(format!("cannot write {}", path.display()), e))
}

/// Inclusive "A..B" range, or a single integer.
fn parse_k_range(s: &str) -> Result<Vec<usize>> {
    let bad = |what: &str| {
        Error::Usage(format!("cannot parse form-count range {s:?}: {what} (want `N` or `A..B`)"))
    };
    if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad("bad start"))?;
        let b: usize = b.trim().parse().map_err(|_| bad("bad end"))?;
        if a > b {
            return Err(bad("start exceeds end"));
        }
        Ok((a..=b).collect())
    } else {
        Ok(vec![s.trim().parse().map_err(|_| bad("not an integer"))?])
    }
}

// ── synth ───────────────────────────────────────────────────────────────

#[derive(Args)]
struct SynthArgs {
    /// Run directory to create the corpus in
    #[arg(long)]
    dir: PathBuf,
    /// Number of inflection classes (twin pairs share lemma suffixes)
    #[arg(long, default_value_t = 8)]
    classes: usize,
    /// Records per class
    #[arg(long = "per-class", default_value_t = 80)]
    per_class: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    ensure_dir(&args.dir)?;
    let config = synth::SynthConfig {
        classes: args.classes,
        per_class: args.per_class,
        seed: args.seed,
    };
    let corpus = synth::generate(&config)?;
    let lexemes = args.dir.join("lexemes.tsv");
    let forms = args.dir.join("forms.tsv");
    let spec = args.dir.join("synth_spec.json");
    write_text(&lexemes, &corpus.lexemes_tsv())?;
    write_text(&forms, &corpus.forms_tsv())?;
    write_text(&spec, &corpus.spec_json()?)?;

    let mut manifest = PipelineManifest::load_or_default(&manifest_path(&args.dir))?;
    manifest.record_file("lexemes.tsv", &lexemes)?;
    manifest.record_file("forms.tsv", &forms)?;
    manifest.record_file("synth_spec.json", &spec)?;
    manifest.save(&manifest_path(&args.dir))?;

    eprintln!(
        "synth: {} records over {} classes -> {}",
        corpus.lexemes.len(),
        args.classes,
        args.dir.display()
    );
    Ok(())
}

// ── prepare ─────────────────────────────────────────────────────────────

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    dir: PathBuf,
    /// Input lexeme TSV (defaults to DIR/lexemes.tsv)
    #[arg(long)]
    lexemes: Option<PathBuf>,
    /// Cleaning configuration JSON; flags below override its fields
    #[arg(long)]
    filters: Option<PathBuf>,
    /// Minimum records per (POS, Contlex) class
    #[arg(long = "min-support")]
    min_support: Option<usize>,
    /// Comma-separated POS whitelist, e.g. `N,V`
    #[arg(long)]
    pos: Option<String>,
    /// Lemma exclusion regex (repeatable); replaces the default set
    #[arg(long = "exclude")]
    exclude: Vec<String>,
}

fn cmd_prepare(args: &PrepareArgs) -> Result<()> {
    ensure_dir(&args.dir)?;
    let lexemes_path = args.lexemes.clone().unwrap_or_else(|| args.dir.join("lexemes.tsv"));
    require(&lexemes_path, "synth --dir ... (or provide --lexemes)")?;

    let mut config = match &args.filters {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io_context(format!("cannot read {}", path.display()), e))?;
            serde_json::from_str::<CleaningConfig>(&text)
                .map_err(|e| Error::Format(format!("filters {}: {e}", path.display())))?
        }
        None => CleaningConfig::default(),
    };
    if let Some(min) = args.min_support {
        config.min_support = min;
    }
    if let Some(pos) = &args.pos {
        config.allowed_pos = pos.split(',').map(|s| s.trim().to_string()).collect();
    }
    if !args.exclude.is_empty() {
        config.exclude_patterns = args.exclude.clone();
    }

    let mut manifest = PipelineManifest::load_or_default(&manifest_path(&args.dir))?;
    check_or_adopt(&mut manifest, &artifact_name(&args.dir, &lexemes_path), &lexemes_path)?;

    let records = load_lexemes(&lexemes_path)?;
    let dataset = clean(records, &config, &lexemes_path.display().to_string())?;
    for entry in &dataset.filter_log {
        eprintln!(
            "prepare: {:<14} {:>6} -> {:>6}",
            entry.stage, entry.in_count, entry.out_count
        );
    }

    let clean_path = args.dir.join("clean.tsv");
    save_lexemes(&dataset.records, &clean_path)?;
    let log_path = args.dir.join("filter_log.json");
    let log = serde_json::json!({ "config": config, "stages": dataset.filter_log });
    write_text(&log_path, &format!("{}\n", serde_json::to_string_pretty(&log)?))?;

    manifest.record_file("clean.tsv", &clean_path)?;
    manifest.record_file("filter_log.json", &log_path)?;
    manifest.save(&manifest_path(&args.dir))?;
    eprintln!("prepare: kept {} records -> {}", dataset.records.len(), clean_path.display());
    Ok(())
}

// ── split ───────────────────────────────────────────────────────────────

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    dir: PathBuf,
    /// Cleaned TSV to split (defaults to DIR/clean.tsv)
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long = "test-fraction", default_value_t = 0.1)]
    test_fraction: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn cmd_split(args: &SplitArgs) -> Result<()> {
    let input = args.input.clone().unwrap_or_else(|| args.dir.join("clean.tsv"));
    require(&input, "prepare")?;
    let mut manifest = PipelineManifest::load_or_default(&manifest_path(&args.dir))?;
    check_or_adopt(&mut manifest, &artifact_name(&args.dir, &input), &input)?;

    let records = load_lexemes(&input)?;
    let spec = SplitSpec { test_fraction: args.test_fraction, seed: args.seed };
    let (train, test) = stratified_split(&records, &spec)?;
    let train_path = args.dir.join("train.tsv");
    let test_path = args.dir.join("test.tsv");
    save_lexemes(&train, &train_path)?;
    save_lexemes(&test, &test_path)?;

    manifest.record_file("train.tsv", &train_path)?;
    manifest.record_file("test.tsv", &test_path)?;
    manifest.save(&manifest_path(&args.dir))?;
    eprintln!("split: {} train / {} test records", train.len(), test.len());
    Ok(())
}

// ── augment ─────────────────────────────────────────────────────────────

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    dir: PathBuf,
    /// Lexeme TSV to augment (defaults to DIR/train.tsv)
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output JSONL (defaults to DIR/train.jsonl)
    #[arg(long)]
    output: Option<PathBuf>,
    /// Forms TSV backing the generator (defaults to DIR/forms.tsv)
    #[arg(long)]
    forms: Option<PathBuf>,
}

fn cmd_augment(args: &AugmentArgs) -> Result<()> {
    let input = args.input.clone().unwrap_or_else(|| args.dir.join("train.tsv"));
    let output = args.output.clone().unwrap_or_else(|| args.dir.join("train.jsonl"));
    let forms = args.forms.clone().unwrap_or_else(|| args.dir.join("forms.tsv"));
    require(&input, "split")?;
    require(&forms, "synth --dir ... (or provide --forms)")?;

    let mut manifest = PipelineManifest::load_or_default(&manifest_path(&args.dir))?;
    check_or_adopt(&mut manifest, &artifact_name(&args.dir, &input), &input)?;
    check_or_adopt(&mut manifest, &artifact_name(&args.dir, &forms), &forms)?;

    let records = load_lexemes(&input)?;
    let generator = file_backed_generator(&forms)?;
    let spec = default_miniparadigms();
    let entries = records
        .iter()
        .map(|r| generate_forms(&generator, r, &spec))
        .collect::<Result<Vec<_>>>()?;
    let total_forms: usize = entries.iter().map(|e| e.forms.len()).sum();
    save_entries(&entries, &output)?;

    manifest.record_file(&artifact_name(&args.dir, &output), &output)?;
    manifest.save(&manifest_path(&args.dir))?;
    eprintln!(
        "augment: {} entries ({} forms attached) -> {}",
        entries.len(),
        total_forms,
        output.display()
    );
    Ok(())
}

// ── train-bpe ───────────────────────────────────────────────────────────

#[derive(Args)]
struct TrainBpeArgs {
    #[arg(long)]
    dir: PathBuf,
    /// Augmented JSONL to learn from (defaults to DIR/train.jsonl)
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long = "vocab-size", default_value_t = 2000)]
    vocab_size: usize,
    /// Max input slots (lemma + forms) per assembled line
    #[arg(long = "max-forms", default_value_t = 11)]
    max_forms: usize,
    /// Output model path (defaults to DIR/vocab.bpe)
    #[arg(long)]
    output: Option<PathBuf>,
}

fn cmd_train_bpe(args: &TrainBpeArgs) -> Result<()> {
    let input = args.input.clone().unwrap_or_else(|| args.dir.join("train.jsonl"));
    let output = args.output.clone().unwrap_or_else(|| args.dir.join("vocab.bpe"));
    require(&input, "augment")?;
    let mut manifest = PipelineManifest::load_or_default(&manifest_path(&args.dir))?;
    check_or_adopt(&mut manifest, &artifact_name(&args.dir, &input), &input)?;

    let entries = load_entries(&input)?;
    let lines = entries
        .iter()
        .map(|e| morphclass::augment::assemble_input(e, args.max_forms))
        .collect::<Result<Vec<_>>>()?;
    let model = bpe::train_bpe(&lines, args.vocab_size)?;
    model.save(&output)?;

    manifest.record_file(&artifact_name(&args.dir, &output), &output)?;
    manifest.save(&manifest_path(&args.dir))?;
    eprintln!(
        "train-bpe: vocabulary {} ({} merges) -> {}",
        model.vocab_size(),
        model.merges().len(),
        output.display()
    );
    Ok(())
}

// ── encode ──────────────────────────────────────────────────────────────

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    dir: PathBuf,
    /// Augmented JSONL (defaults to DIR/train.jsonl)
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output examples JSONL (defaults to input with .examples.jsonl)
    #[arg(long)]
    output: Option<PathBuf>,
    /// BPE model (defaults to DIR/vocab.bpe)
    #[arg(long)]
    bpe: Option<PathBuf>,
    /// Label space JSON (defaults to DIR/labels.json)
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Fit the label space from this input and save it
    #[arg(long = "fit-labels", default_value_t = false)]
    fit_labels: bool,
    #[arg(long = "max-forms", default_value_t = 11)]
    max_forms: usize,
}

fn default_examples_path(input: &Path) -> PathBuf {
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    input.with_file_name(format!("{stem}.examples.jsonl"))
}

fn cmd_encode(args: &EncodeArgs) -> Result<()> {
    let input = args.input.clone().unwrap_or_else(|| args.dir.join("train.jsonl"));
    let output = args.output.clone().unwrap_or_else(|| default_examples_path(&input));
    let bpe_path = args.bpe.clone().unwrap_or_else(|| args.dir.join("vocab.bpe"));
    let labels_path = args.labels.clone().unwrap_or_else(|| args.dir.join("labels.json"));
    require(&input, "augment")?;
    require(&bpe_path, "train-bpe")?;

    let mut manifest = PipelineManifest::load_or_default(&manifest_path(&args.dir))?;
    check_or_adopt(&mut manifest, &artifact_name(&args.dir, &input), &input)?;
    check_or_adopt(&mut manifest, &artifact_name(&args.dir, &bpe_path), &bpe_path)?;

    let entries = load_entries(&input)?;
    let labels = if args.fit_labels {
        let records: Vec<morphclass::corpus::LexemeRecord> = entries
            .iter()
            .map(|e| morphclass::corpus::LexemeRecord::new(&e.lemma, &e.pos, &e.contlex))
            .collect();
        let labels = morphclass::labels::fit(&records)?;
        labels.save(&labels_path)?;
        manifest.record_file(&artifact_name(&args.dir, &labels_path), &labels_path)?;
        labels
    } else {
        require(&labels_path, "encode --fit-labels")?;
        check_or_adopt(&mut manifest, &artifact_name(&args.dir, &labels_path), &labels_path)?;
        LabelSpace::load(&labels_path)?
    };

    let model = bpe::BpeModel::load(&bpe_path)?;
    let examples = entries_to_examples(&entries, &model, &labels, args.max_forms)?;
    save_examples(&examples, &output)?;

    manifest.record_file(&artifact_name(&args.dir, &output), &output)?;
    manifest.save(&manifest_path(&args.dir))?;
    let longest = examples.iter().map(|e| e.tokens.len()).max().unwrap_or(0);
    eprintln!(
        "encode: {} examples (longest {} tokens, {} POS / {} Contlex labels) -> {}",
        examples.len(),
        longest,
        labels.n_pos(),
        labels.n_contlex(),
        output.display()
    );
    Ok(())
}

// ── train ───────────────────────────────────────────────────────────────

#[derive(Args, Clone)]
struct SchedulerArgs {
    /// cosine | exponential | plateau
    #[arg(long, default_value = "cosine")]
    scheduler: String,
    #[arg(long = "t-max", default_value_t = 25)]
    t_max: usize,
    #[arg(long = "eta-min", default_value_t = 0.0)]
    eta_min: f64,
    #[arg(long, default_value_t = 0.95)]
    gamma: f64,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 0.1)]
    factor: f64,
    #[arg(long = "min-lr", default_value_t = 1e-6)]
    min_lr: f64,
}

impl SchedulerArgs {
    fn to_spec(&self) -> Result<SchedulerSpec> {
        match self.scheduler.as_str() {
            "cosine" => Ok(SchedulerSpec::Cosine { t_max: self.t_max, eta_min: self.eta_min }),
            "exponential" => Ok(SchedulerSpec::Exponential { gamma: self.gamma }),
            "plateau" => Ok(SchedulerSpec::Plateau {
                patience: self.patience,
                factor: self.factor,
                min_lr: self.min_lr,
            }),
            other => Err(Error::Config(format!(
                "unknown scheduler `{other}` (expected cosine | exponential | plateau)"
            ))),
        }
    }
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long = "d-model", default_value_t = 128)]
    d_model: usize,
    /// Feed-forward width (defaults to 4 x d-model)
    #[arg(long = "ffn-dim")]
    ffn_dim: Option<usize>,
    #[arg(long = "n-layers", default_value_t = 2)]
    n_layers: usize,
    #[arg(long = "n-heads", default_value_t = 4)]
    n_heads: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long = "max-len", default_value_t = 192)]
    max_len: usize,
}

impl ModelArgs {
    fn to_config(&self, vocab_size: usize, n_pos: usize, n_contlex: usize, seed: u64) -> ModelConfig {
        let mut config = ModelConfig::new(vocab_size, n_pos, n_contlex);
        config.d_model = self.d_model;
        config.ffn_dim = self.ffn_dim.unwrap_or(4 * self.d_model);
        config.n_layers = self.n_layers;
        config.n_heads = self.n_heads;
        config.dropout = self.dropout;
        config.max_len = self.max_len;
        config.seed = seed;
        config
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dir: PathBuf,
    /// Training examples JSONL (defaults to DIR/train.examples.jsonl)
    #[arg(long)]
    train: Option<PathBuf>,
    /// Validation examples JSONL (defaults to the training set)
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    bpe: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long = "batch-size", default_value_t = 512)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.003)]
    lr: f64,
    #[command(flatten)]
    scheduler: SchedulerArgs,
    #[arg(long = "weight-decay", default_value_t = 0.01)]
    weight_decay: f64,
    #[arg(long = "w-pos", default_value_t = 1.0)]
    w_pos: f64,
    #[arg(long = "w-contlex", default_value_t = 1.0)]
    w_contlex: f64,
    #[arg(long = "swa-start", default_value_t = 80)]
    swa_start: usize,
    #[arg(long = "swa-lr", default_value_t = 5e-4)]
    swa_lr: f64,
    #[arg(long = "swa-anneal", default_value_t = 5)]
    swa_anneal: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    model: ModelArgs,
}

struct LoadedTrainInputs {
    train: Vec<morphclass::train::Example>,
    val: Vec<morphclass::train::Example>,
    vocab_size: usize,
    n_pos: usize,
    n_contlex: usize,
}

fn load_train_inputs(
    dir: &Path,
    train: &Option<PathBuf>,
    val: &Option<PathBuf>,
    bpe_path: &Option<PathBuf>,
    labels_path: &Option<PathBuf>,
    manifest: &mut PipelineManifest,
) -> Result<LoadedTrainInputs> {
    let train_path = train.clone().unwrap_or_else(|| dir.join("train.examples.jsonl"));
    let bpe_path = bpe_path.clone().unwrap_or_else(|| dir.join("vocab.bpe"));
    let labels_path = labels_path.clone().unwrap_or_else(|| dir.join("labels.json"));
    require(&train_path, "encode")?;
    require(&bpe_path, "train-bpe")?;
    require(&labels_path, "encode --fit-labels")?;
    check_or_adopt(manifest, &artifact_name(dir, &train_path), &train_path)?;
    check_or_adopt(manifest, &artifact_name(dir, &bpe_path), &bpe_path)?;
    check_or_adopt(manifest, &artifact_name(dir, &labels_path), &labels_path)?;

    let train_set = load_examples(&train_path)?;
    let val_set = match val {
        Some(path) => {
            require(path, "encode")?;
            check_or_adopt(manifest, &artifact_name(dir, path), path)?;
            load_examples(path)?
        }
        None => train_set.clone(),
    };
    let bpe_model = bpe::BpeModel::load(&bpe_path)?;
    let labels = LabelSpace::load(&labels_path)?;
    Ok(LoadedTrainInputs {
        train: train_set,
        val: val_set,
        vocab_size: bpe_model.vocab_size(),
        n_pos: labels.n_pos(),
        n_contlex: labels.n_contlex(),
    })
}

fn run_training(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    inputs: &LoadedTrainInputs,
    out_dir: &Path,
    tag: &str,
) -> Result<(Checkpoint, TransformerClassifier<f32>)> {
    let mut model = TransformerClassifier::<f32>::init(model_config)?;
    let out = train_with_progress(&mut model, &inputs.train, &inputs.val, train_config, |e| {
        eprintln!(
            "{tag}: epoch {:>3}  lr {:.6}  loss {:.4} (pos {:.4} contlex {:.4})  val-F1 {:.4}/{:.4}{}",
            e.epoch,
            e.lr,
            e.train_loss,
            e.train_loss_pos,
            e.train_loss_contlex,
            e.val_pos_weighted_f1,
            e.val_contlex_weighted_f1,
            if e.checkpoint_saved { "  *" } else { "" }
        );
    })?;

    let swa_ckpt = out.swa.to_checkpoint(train_config.epochs, out.history.total_steps, Vec::new());
    swa_ckpt.save(out_dir.join("model.ckpt"))?;
    out.best.save(out_dir.join("best.ckpt"))?;
    write_text(&out_dir.join("history.jsonl"), &history_to_jsonl(&out.history)?)?;
    eprintln!(
        "{tag}: best epoch {} (metric {:.4}), {} SWA snapshots",
        out.history.best_epoch, out.history.best_metric, out.history.swa_snapshots
    );
    Ok((swa_ckpt, out.swa))
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut manifest = PipelineManifest::load_or_default(&manifest_path(&args.dir))?;
    let inputs = load_train_inputs(
        &args.dir,
        &args.train,
        &args.val,
        &args.bpe,
        &args.labels,
        &mut manifest,
    )?;
    let model_config =
        args.model.to_config(inputs.vocab_size, inputs.n_pos, inputs.n_contlex, args.seed);
    let train_config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr: args.lr,
        scheduler: args.scheduler.to_spec()?,
        weight_decay: args.weight_decay,
        betas: (0.9, 0.999),
        eps: 1e-8,
        loss_weights: (args.w_pos, args.w_contlex),
        swa_start_epoch: args.swa_start,
        swa_lr: args.swa_lr,
        swa_anneal_epochs: args.swa_anneal,
        seed: args.seed,
    };
    run_training(&model_config, &train_config, &inputs, &args.dir, "train")?;

    for name in ["model.ckpt", "best.ckpt", "history.jsonl"] {
        manifest.record_file(name, &args.dir.join(name))?;
    }
    manifest.save(&manifest_path(&args.dir))?;
    Ok(())
}

// ── evaluate ────────────────────────────────────────────────────────────

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    dir: PathBuf,
    /// Checkpoint to score (defaults to DIR/model.ckpt)
    #[arg(long)]
    model: Option<PathBuf>,
    /// Encoded examples (defaults to DIR/test.examples.jsonl)
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// none | predicted-pos | gold-pos
    #[arg(long, default_value = "predicted-pos")]
    masking: String,
    #[arg(long = "batch-size", default_value_t = 512)]
    batch_size: usize,
    /// Report path (defaults to DIR/report.json)
    #[arg(long)]
    output: Option<PathBuf>,
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let model_path = args.model.clone().unwrap_or_else(|| args.dir.join("model.ckpt"));
    let data_path = args.data.clone().unwrap_or_else(|| args.dir.join("test.examples.jsonl"));
    let labels_path = args.labels.clone().unwrap_or_else(|| args.dir.join("labels.json"));
    let output = args.output.clone().unwrap_or_else(|| args.dir.join("report.json"));
    require(&model_path, "train")?;
    require(&data_path, "encode")?;
    require(&labels_path, "encode --fit-labels")?;

    let mut manifest = PipelineManifest::load_or_default(&manifest_path(&args.dir))?;
    for path in [&model_path, &data_path, &labels_path] {
        check_or_adopt(&mut manifest, &artifact_name(&args.dir, path), path)?;
    }

    let masking: MaskingMode = args.masking.parse()?;
    let ckpt = Checkpoint::load(&model_path)?;
    let (model, _) = TransformerClassifier::<f32>::from_checkpoint(&ckpt)?;
    let examples = load_examples(&data_path)?;
    let labels = LabelSpace::load(&labels_path)?;
    let (pos, contlex) = evaluate_model(&model, &examples, &labels, masking, args.batch_size)?;
    eprintln!(
        "evaluate: POS acc {:.4} / weighted F1 {:.4}; Contlex acc {:.4} / weighted F1 {:.4} ({} examples, masking {})",
        pos.accuracy, pos.weighted.f1, contlex.accuracy, contlex.weighted.f1, pos.n_examples, masking
    );
    let report = build_report(&model.config, masking, pos, contlex)?;
    write_report(&report, &output)?;

    manifest.record_file(&artifact_name(&args.dir, &output), &output)?;
    manifest.save(&manifest_path(&args.dir))?;
    eprintln!("evaluate: report -> {}", output.display());
    Ok(())
}

// ── sweep ───────────────────────────────────────────────────────────────

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Augmented JSONL with full paradigms (defaults to DIR/test.jsonl)
    #[arg(long)]
    entries: Option<PathBuf>,
    #[arg(long)]
    bpe: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Form counts to test: `N` or inclusive `A..B`
    #[arg(long, default_value = "1..11")]
    k: String,
    #[arg(long, default_value = "predicted-pos")]
    masking: String,
    #[arg(long = "batch-size", default_value_t = 512)]
    batch_size: usize,
    /// CSV path (defaults to DIR/sweep.csv)
    #[arg(long)]
    output: Option<PathBuf>,
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let model_path = args.model.clone().unwrap_or_else(|| args.dir.join("model.ckpt"));
    let entries_path = args.entries.clone().unwrap_or_else(|| args.dir.join("test.jsonl"));
    let bpe_path = args.bpe.clone().unwrap_or_else(|| args.dir.join("vocab.bpe"));
    let labels_path = args.labels.clone().unwrap_or_else(|| args.dir.join("labels.json"));
    let output = args.output.clone().unwrap_or_else(|| args.dir.join("sweep.csv"));
    require(&model_path, "train")?;
    require(&entries_path, "augment")?;
    require(&bpe_path, "train-bpe")?;
    require(&labels_path, "encode --fit-labels")?;

    let mut manifest = PipelineManifest::load_or_default(&manifest_path(&args.dir))?;
    for path in [&model_path, &entries_path, &bpe_path, &labels_path] {
        check_or_adopt(&mut manifest, &artifact_name(&args.dir, path), path)?;
    }

    let k_values = parse_k_range(&args.k)?;
    let masking: MaskingMode = args.masking.parse()?;
    let ckpt = Checkpoint::load(&model_path)?;
    let (model, _) = TransformerClassifier::<f32>::from_checkpoint(&ckpt)?;
    let entries = load_entries(&entries_path)?;
    let bpe_model = bpe::BpeModel::load(&bpe_path)?;
    let labels = LabelSpace::load(&labels_path)?;
    let scorer = ModelScorer { model: &model };
    let rows = sweep_forms(
        &scorer,
        &entries,
        &bpe_model,
        &labels,
        &k_values,
        masking,
        args.batch_size,
    )?;
    for row in &rows {
        eprintln!(
            "sweep: k={:<3} pos {:.4}  contlex {:.4}",
            row.k, row.pos_accuracy, row.contlex_accuracy
        );
    }
    write_text(&output, &sweep_to_csv(&rows))?;

    manifest.record_file(&artifact_name(&args.dir, &output), &output)?;
    manifest.save(&manifest_path(&args.dir))?;
    eprintln!("sweep: {} rows -> {}", rows.len(), output.display());
    Ok(())
}

// ── grid ────────────────────────────────────────────────────────────────

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    val: Option<PathBuf>,
    /// Encoded examples for the per-row report (defaults to DIR/test.examples.jsonl)
    #[arg(long = "eval-data")]
    eval_data: Option<PathBuf>,
    #[arg(long)]
    bpe: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long = "batch-size", default_value_t = 512)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.003)]
    lr: f64,
    #[arg(long = "swa-start", default_value_t = 80)]
    swa_start: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long = "d-model", default_value_t = 128)]
    d_model: usize,
    #[arg(long = "max-len", default_value_t = 192)]
    max_len: usize,
    #[arg(long, default_value = "predicted-pos")]
    masking: String,
}

/// The six grid rows: scheduler, dropout, layer count, head count.
fn grid_rows() -> Vec<(&'static str, SchedulerSpec, f64, usize, usize)> {
    let cosine = SchedulerSpec::Cosine { t_max: 25, eta_min: 0.0 };
    vec![
        ("exp1", cosine.clone(), 0.1, 2, 4),
        ("exp2", cosine.clone(), 0.2, 3, 4),
        ("exp3", cosine.clone(), 0.2, 3, 8),
        ("exp4", SchedulerSpec::Exponential { gamma: 0.95 }, 0.2, 3, 8),
        (
            "exp5",
            SchedulerSpec::Plateau { patience: 10, factor: 0.1, min_lr: 1e-6 },
            0.2,
            3,
            8,
        ),
        ("exp6", cosine, 0.2, 10, 8),
    ]
}

fn cmd_grid(args: &GridArgs) -> Result<()> {
    let mut manifest = PipelineManifest::load_or_default(&manifest_path(&args.dir))?;
    let inputs = load_train_inputs(
        &args.dir,
        &args.train,
        &args.val,
        &args.bpe,
        &args.labels,
        &mut manifest,
    )?;
    let eval_path =
        args.eval_data.clone().unwrap_or_else(|| args.dir.join("test.examples.jsonl"));
    require(&eval_path, "encode")?;
    check_or_adopt(&mut manifest, &artifact_name(&args.dir, &eval_path), &eval_path)?;
    let eval_examples = load_examples(&eval_path)?;
    let labels_path =
        args.labels.clone().unwrap_or_else(|| args.dir.join("labels.json"));
    let labels = LabelSpace::load(&labels_path)?;
    let masking: MaskingMode = args.masking.parse()?;

    for (name, scheduler, dropout, n_layers, n_heads) in grid_rows() {
        let row_dir = args.dir.join("grid").join(name);
        ensure_dir(&row_dir)?;
        let mut model_config = ModelConfig::new(inputs.vocab_size, inputs.n_pos, inputs.n_contlex);
        model_config.d_model = args.d_model;
        model_config.ffn_dim = 4 * args.d_model;
        model_config.n_layers = n_layers;
        model_config.n_heads = n_heads;
        model_config.dropout = dropout;
        model_config.max_len = args.max_len;
        model_config.seed = args.seed;
        let train_config = TrainConfig {
            epochs: args.epochs,
            batch_size: args.batch_size,
            lr: args.lr,
            scheduler,
            swa_start_epoch: args.swa_start,
            seed: args.seed,
            ..TrainConfig::default()
        };
        eprintln!(
            "grid {name}: {:?} dropout {dropout} layers {n_layers} heads {n_heads}",
            train_config.scheduler
        );
        let (_, swa_model) = run_training(&model_config, &train_config, &inputs, &row_dir, name)?;

        let (pos, contlex) =
            evaluate_model(&swa_model, &eval_examples, &labels, masking, args.batch_size)?;
        eprintln!(
            "grid {name}: POS F1 {:.4}  Contlex F1 {:.4}",
            pos.weighted.f1, contlex.weighted.f1
        );
        let report = build_report(&model_config, masking, pos, contlex)?;
        write_report(&report, &row_dir.join("report.json"))?;
        for file in ["model.ckpt", "best.ckpt", "history.jsonl", "report.json"] {
            manifest.record_file(
                &format!("grid/{name}/{file}"),
                &row_dir.join(file),
            )?;
        }
    }
    manifest.save(&manifest_path(&args.dir))?;
    eprintln!("grid: 6 rows -> {}", args.dir.join("grid").display());
    Ok(())
}

// ── entry point ─────────────────────────────────────────────────────────

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Prepare(args) => cmd_prepare(args),
        Command::Split(args) => cmd_split(args),
        Command::Augment(args) => cmd_augment(args),
        Command::TrainBpe(args) => cmd_train_bpe(args),
        Command::Encode(args) => cmd_encode(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Grid(args) => cmd_grid(args),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
