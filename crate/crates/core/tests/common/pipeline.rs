//! In-process end-to-end pipeline on the synthetic corpus: generate, clean,
//! split, augment, tokenize, encode, train, evaluate, sweep. Mirrors the CLI
//! defaults for the synthetic-reproduction scenario so the acceptance suite
//! can assert on metrics, loss traces, and reports without spawning
//! processes.

use std::time::{Duration, Instant};

use morphclass::augment::{assemble_input, default_miniparadigms, generate_forms, parse_forms};
use morphclass::bpe::train_bpe;
use morphclass::corpus::{clean, parse_lexemes, stratified_split, CleaningConfig, SplitSpec};
use morphclass::eval::{
    build_report, entries_to_examples, evaluate_model, report_to_json, sweep_forms, MaskingMode,
    ModelScorer, SweepRow,
};
use morphclass::model::{ModelConfig, TransformerClassifier};
use morphclass::synth::{generate, SynthConfig};
use morphclass::train::{history_to_jsonl, train, SchedulerSpec, TrainConfig};
use morphclass::Result;

pub struct PipelineRun {
    pub history_jsonl: String,
    pub report_json: String,
    pub pos_weighted_f1: f64,
    pub contlex_weighted_f1: f64,
    pub final_train_loss: f64,
    pub sweep: Vec<SweepRow>,
    pub wall: Duration,
}

/// Eight classes x 80 records, vocabulary 500, 40 epochs at d_model 64 with
/// cosine annealing (T_max 10) and weight averaging from epoch 32.
pub fn run_synthetic_pipeline() -> Result<PipelineRun> {
    let started = Instant::now();

    let corpus = generate(&SynthConfig { classes: 8, per_class: 80, seed: 42 })?;
    let records = parse_lexemes(&corpus.lexemes_tsv())?;
    let dataset = clean(records, &CleaningConfig::default(), "synthetic")?;
    let (train_recs, test_recs) =
        stratified_split(&dataset.records, &SplitSpec { test_fraction: 0.1, seed: 42 })?;

    let generator = parse_forms(&corpus.forms_tsv())?;
    let spec = default_miniparadigms();
    let train_entries = train_recs
        .iter()
        .map(|r| generate_forms(&generator, r, &spec))
        .collect::<Result<Vec<_>>>()?;
    let test_entries = test_recs
        .iter()
        .map(|r| generate_forms(&generator, r, &spec))
        .collect::<Result<Vec<_>>>()?;

    // Input slots: the lemma plus every miniparadigm form.
    let max_forms = 1 + spec.max_forms_per_entry();
    let lines = train_entries
        .iter()
        .map(|e| assemble_input(e, max_forms))
        .collect::<Result<Vec<_>>>()?;
    let bpe = train_bpe(&lines, 500)?;
    let labels = morphclass::labels::fit(&train_recs)?;

    let train_examples = entries_to_examples(&train_entries, &bpe, &labels, max_forms)?;
    let test_examples = entries_to_examples(&test_entries, &bpe, &labels, max_forms)?;

    let mut model_config = ModelConfig::new(bpe.vocab_size(), labels.n_pos(), labels.n_contlex());
    model_config.d_model = 64;
    model_config.ffn_dim = 256;
    model_config.n_layers = 2;
    model_config.n_heads = 4;
    model_config.dropout = 0.2;
    model_config.max_len = 192;
    model_config.seed = 42;
    let train_config = TrainConfig {
        epochs: 40,
        batch_size: 64,
        lr: 0.003,
        scheduler: SchedulerSpec::Cosine { t_max: 10, eta_min: 0.0 },
        swa_start_epoch: 32,
        seed: 42,
        ..TrainConfig::default()
    };
    let mut model = TransformerClassifier::<f32>::init(&model_config)?;
    let out = train(&mut model, &train_examples, &train_examples, &train_config)?;
    let history_jsonl = history_to_jsonl(&out.history)?;
    let final_train_loss = out.history.epochs.last().map(|e| e.train_loss).unwrap_or(f64::NAN);

    let (pos_report, contlex_report) =
        evaluate_model(&out.swa, &test_examples, &labels, MaskingMode::PredictedPos, 64)?;
    let pos_weighted_f1 = pos_report.weighted.f1;
    let contlex_weighted_f1 = contlex_report.weighted.f1;
    let report =
        build_report(&model_config, MaskingMode::PredictedPos, pos_report, contlex_report)?;
    let report_json = report_to_json(&report)?;

    let scorer = ModelScorer { model: &out.swa };
    let k_values: Vec<usize> = (1..=max_forms).collect();
    let sweep = sweep_forms(
        &scorer,
        &test_entries,
        &bpe,
        &labels,
        &k_values,
        MaskingMode::PredictedPos,
        64,
    )?;

    Ok(PipelineRun {
        history_jsonl,
        report_json,
        pos_weighted_f1,
        contlex_weighted_f1,
        final_train_loss,
        sweep,
        wall: started.elapsed(),
    })
}
