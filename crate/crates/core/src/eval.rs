//! Classification metrics (per-label / weighted / macro precision, recall,
//! F1, accuracy), POS-masked Contlex decoding, the accuracy-vs-form-count
//! sweep, and JSON report emission.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{assemble_input, AugmentedEntry};
use crate::bpe::BpeModel;
use crate::error::{Error, Result};
use crate::labels::LabelSpace;
use crate::manifest::sha256_hex;
use crate::model::{ModelConfig, TransformerClassifier};
use crate::train::Example;

// ── masking ─────────────────────────────────────────────────────────────

/// How Contlex logits are restricted before argmax. `PredictedPos` and
/// `GoldPos` zero out (to -inf) every Contlex class outside the chosen
/// POS's block, guaranteeing a POS-consistent prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskingMode {
    None,
    PredictedPos,
    GoldPos,
}

impl fmt::Display for MaskingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MaskingMode::None => "none",
            MaskingMode::PredictedPos => "predicted-pos",
            MaskingMode::GoldPos => "gold-pos",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for MaskingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(MaskingMode::None),
            "predicted-pos" => Ok(MaskingMode::PredictedPos),
            "gold-pos" => Ok(MaskingMode::GoldPos),
            other => Err(Error::Config(format!(
                "unknown masking mode `{other}` (expected none | predicted-pos | gold-pos)"
            ))),
        }
    }
}

// ── confusion counts and metrics ────────────────────────────────────────

/// Per-label true-positive / false-positive / false-negative counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionTally {
    pub tp: Vec<usize>,
    pub fp: Vec<usize>,
    pub fn_: Vec<usize>,
    pub n: usize,
}

impl ConfusionTally {
    pub fn from_pairs(preds: &[usize], golds: &[usize], n_labels: usize) -> Result<Self> {
        if preds.len() != golds.len() {
            return Err(Error::Usage(format!(
                "{} predictions vs {} gold labels",
                preds.len(),
                golds.len()
            )));
        }
        if preds.is_empty() {
            return Err(Error::Usage("cannot score an empty prediction list".into()));
        }
        let mut tally = ConfusionTally {
            tp: vec![0; n_labels],
            fp: vec![0; n_labels],
            fn_: vec![0; n_labels],
            n: preds.len(),
        };
        for (&p, &g) in preds.iter().zip(golds) {
            if p >= n_labels || g >= n_labels {
                return Err(Error::Lookup(format!(
                    "label id {} outside the {} known labels",
                    p.max(g),
                    n_labels
                )));
            }
            if p == g {
                tally.tp[p] += 1;
            } else {
                tally.fp[p] += 1;
                tally.fn_[g] += 1;
            }
        }
        Ok(tally)
    }

    pub fn support(&self, label: usize) -> usize {
        self.tp[label] + self.fn_[label]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub masking: MaskingMode,
    pub n_examples: usize,
    pub accuracy: f64,
    pub per_label: Vec<LabelMetrics>,
    /// Support-weighted means over all labels.
    pub weighted: Averages,
    /// Unweighted means over labels with gold support > 0.
    pub macro_avg: Averages,
    /// Convention marker: precision/recall with a zero denominator are
    /// reported as 0 rather than skipped.
    pub zero_division: String,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1_of(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn compute_metrics(
    preds: &[usize],
    golds: &[usize],
    label_names: &[String],
    task: &str,
    masking: MaskingMode,
) -> Result<MetricsReport> {
    let tally = ConfusionTally::from_pairs(preds, golds, label_names.len())?;
    let n = tally.n;

    let mut per_label = Vec::with_capacity(label_names.len());
    let mut weighted = Averages { precision: 0.0, recall: 0.0, f1: 0.0 };
    let mut macro_avg = Averages { precision: 0.0, recall: 0.0, f1: 0.0 };
    let mut supported = 0usize;
    for (i, name) in label_names.iter().enumerate() {
        let support = tally.support(i);
        let precision = ratio(tally.tp[i], tally.tp[i] + tally.fp[i]);
        let recall = ratio(tally.tp[i], support);
        let f1 = f1_of(precision, recall);
        let w = support as f64 / n as f64;
        weighted.precision += w * precision;
        weighted.recall += w * recall;
        weighted.f1 += w * f1;
        if support > 0 {
            supported += 1;
            macro_avg.precision += precision;
            macro_avg.recall += recall;
            macro_avg.f1 += f1;
        }
        per_label.push(LabelMetrics { label: name.clone(), precision, recall, f1, support });
    }
    if supported > 0 {
        macro_avg.precision /= supported as f64;
        macro_avg.recall /= supported as f64;
        macro_avg.f1 /= supported as f64;
    }

    let correct: usize = tally.tp.iter().sum();
    Ok(MetricsReport {
        task: task.to_string(),
        masking,
        n_examples: n,
        accuracy: correct as f64 / n as f64,
        per_label,
        weighted,
        macro_avg,
        zero_division: "reported-as-zero".to_string(),
    })
}

// ── prediction ──────────────────────────────────────────────────────────

/// Raw score source for a batch of examples. The model is the production
/// implementation; tests substitute rule-based oracles.
pub trait Scorer {
    /// Returns one `(pos_scores, contlex_scores)` row pair per example.
    fn scores(&self, examples: &[&Example]) -> Result<(Vec<Vec<f32>>, Vec<Vec<f32>>)>;
}

pub struct ModelScorer<'a> {
    pub model: &'a TransformerClassifier<f32>,
}

impl Scorer for ModelScorer<'_> {
    fn scores(&self, examples: &[&Example]) -> Result<(Vec<Vec<f32>>, Vec<Vec<f32>>)> {
        let seqs: Vec<Vec<usize>> = examples.iter().map(|e| e.tokens.clone()).collect();
        self.model.predict(&seqs)
    }
}

/// Highest-scoring index; ties break toward the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Argmax over the positions where `mask` is true; ties break toward the
/// lowest index. Errors when the mask length differs from the row or allows
/// nothing.
pub fn masked_argmax(row: &[f32], mask: &[bool]) -> Result<usize> {
    if mask.len() != row.len() {
        return Err(Error::Shape(format!(
            "mask covers {} classes, scores have {}",
            mask.len(),
            row.len()
        )));
    }
    let mut best: Option<usize> = None;
    for (i, &v) in row.iter().enumerate() {
        if !mask[i] {
            continue;
        }
        match best {
            Some(b) if row[b] >= v => {}
            _ => best = Some(i),
        }
    }
    best.ok_or_else(|| Error::Data("masking removed every Contlex class".into()))
}

/// Argmax decode for both heads. `masks[pos_id]` marks the Contlex classes
/// belonging to that POS; required for the two masked modes.
pub fn predict_labels(
    scorer: &dyn Scorer,
    examples: &[Example],
    masking: MaskingMode,
    masks: Option<&[Vec<bool>]>,
    batch_size: usize,
) -> Result<Vec<(usize, usize)>> {
    if batch_size < 1 {
        return Err(Error::Usage("batch size must be at least 1".into()));
    }
    if masking != MaskingMode::None && masks.is_none() {
        return Err(Error::Usage(format!(
            "masking mode {masking} needs per-POS Contlex masks"
        )));
    }
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let (pos_scores, con_scores) = scorer.scores(&refs)?;
        if pos_scores.len() != chunk.len() || con_scores.len() != chunk.len() {
            return Err(Error::Shape(format!(
                "scorer returned {}/{} rows for a batch of {}",
                pos_scores.len(),
                con_scores.len(),
                chunk.len()
            )));
        }
        for (i, ex) in chunk.iter().enumerate() {
            let pos_pred = argmax(&pos_scores[i]);
            let con_pred = match masking {
                MaskingMode::None => argmax(&con_scores[i]),
                MaskingMode::PredictedPos | MaskingMode::GoldPos => {
                    let masks = masks.unwrap();
                    let which = if masking == MaskingMode::PredictedPos {
                        pos_pred
                    } else {
                        ex.pos
                    };
                    let mask = masks.get(which).ok_or_else(|| {
                        Error::Lookup(format!("no Contlex mask for POS id {which}"))
                    })?;
                    masked_argmax(&con_scores[i], mask)?
                }
            };
            out.push((pos_pred, con_pred));
        }
    }
    Ok(out)
}

// ── evaluation entry points ─────────────────────────────────────────────

fn pos_masks(labels: &LabelSpace) -> Result<Vec<Vec<bool>>> {
    (0..labels.n_pos())
        .map(|i| {
            let pos = labels.decode_pos(i)?.to_string();
            labels.mask_for_pos(&pos)
        })
        .collect()
}

/// Score every example with `scorer` and report metrics for both tasks.
pub fn evaluate_with_scorer(
    scorer: &dyn Scorer,
    examples: &[Example],
    labels: &LabelSpace,
    masking: MaskingMode,
    batch_size: usize,
) -> Result<(MetricsReport, MetricsReport)> {
    let masks = pos_masks(labels)?;
    let pairs = predict_labels(scorer, examples, masking, Some(&masks), batch_size)?;
    let (pos_preds, con_preds): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
    let pos_golds: Vec<usize> = examples.iter().map(|e| e.pos).collect();
    let con_golds: Vec<usize> = examples.iter().map(|e| e.contlex).collect();
    let pos_names: Vec<String> = labels.pos_labels.iter().cloned().collect();
    let con_names: Vec<String> = labels.global_contlex().iter().map(|s| s.to_string()).collect();
    let pos_report = compute_metrics(&pos_preds, &pos_golds, &pos_names, "pos", MaskingMode::None)?;
    let con_report = compute_metrics(&con_preds, &con_golds, &con_names, "contlex", masking)?;
    Ok((pos_report, con_report))
}

pub fn evaluate_model(
    model: &TransformerClassifier<f32>,
    examples: &[Example],
    labels: &LabelSpace,
    masking: MaskingMode,
    batch_size: usize,
) -> Result<(MetricsReport, MetricsReport)> {
    if labels.n_pos() != model.config.n_pos || labels.n_contlex() != model.config.n_contlex {
        return Err(Error::Config(format!(
            "label space has {} POS / {} Contlex classes but the checkpoint \
             was built for {} / {}",
            labels.n_pos(),
            labels.n_contlex(),
            model.config.n_pos,
            model.config.n_contlex
        )));
    }
    evaluate_with_scorer(&ModelScorer { model }, examples, labels, masking, batch_size)
}

/// Unmasked weighted F1 for both heads; the training loop's checkpoint
/// metric. Label names are synthesized from ids so this stays independent
/// of any label space.
pub fn validation_weighted_f1(
    model: &TransformerClassifier<f32>,
    examples: &[Example],
    batch_size: usize,
) -> Result<(f64, f64)> {
    let scorer = ModelScorer { model };
    let pairs = predict_labels(&scorer, examples, MaskingMode::None, None, batch_size)?;
    let (pos_preds, con_preds): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
    let pos_golds: Vec<usize> = examples.iter().map(|e| e.pos).collect();
    let con_golds: Vec<usize> = examples.iter().map(|e| e.contlex).collect();
    let pos_names: Vec<String> = (0..model.config.n_pos).map(|i| i.to_string()).collect();
    let con_names: Vec<String> = (0..model.config.n_contlex).map(|i| i.to_string()).collect();
    let pos = compute_metrics(&pos_preds, &pos_golds, &pos_names, "pos", MaskingMode::None)?;
    let con = compute_metrics(&con_preds, &con_golds, &con_names, "contlex", MaskingMode::None)?;
    Ok((pos.weighted.f1, con.weighted.f1))
}

// ── form-count sweep ────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub pos_accuracy: f64,
    pub contlex_accuracy: f64,
}

/// Tokenize `entries` with inputs capped at `max_forms = k` and encode the
/// labels. The sweep and the plain evaluation path share this.
pub fn entries_to_examples(
    entries: &[AugmentedEntry],
    bpe: &BpeModel,
    labels: &LabelSpace,
    max_forms: usize,
) -> Result<Vec<Example>> {
    entries
        .iter()
        .map(|entry| {
            let text = assemble_input(entry, max_forms)?;
            Ok(Example {
                tokens: bpe.encode(&text),
                pos: labels.encode_pos(&entry.pos)?,
                contlex: labels.encode_contlex(&entry.pos, &entry.contlex)?,
            })
        })
        .collect()
}

/// Re-assemble inputs at each `k`, re-tokenize, and measure both tasks'
/// accuracy — the accuracy-vs-available-context curve.
pub fn sweep_forms(
    scorer: &dyn Scorer,
    entries: &[AugmentedEntry],
    bpe: &BpeModel,
    labels: &LabelSpace,
    k_values: &[usize],
    masking: MaskingMode,
    batch_size: usize,
) -> Result<Vec<SweepRow>> {
    if k_values.is_empty() || k_values.iter().any(|&k| k < 1) {
        return Err(Error::Usage("form counts for the sweep must be at least 1".into()));
    }
    let masks = pos_masks(labels)?;
    let mut rows = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let examples = entries_to_examples(entries, bpe, labels, k)?;
        let pairs = predict_labels(scorer, &examples, masking, Some(&masks), batch_size)?;
        let n = examples.len() as f64;
        let pos_hits = pairs.iter().zip(&examples).filter(|((p, _), e)| *p == e.pos).count();
        let con_hits =
            pairs.iter().zip(&examples).filter(|((_, c), e)| *c == e.contlex).count();
        rows.push(SweepRow {
            k,
            pos_accuracy: pos_hits as f64 / n,
            contlex_accuracy: con_hits as f64 / n,
        });
    }
    Ok(rows)
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("k,pos_accuracy,contlex_accuracy\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.k, r.pos_accuracy, r.contlex_accuracy));
    }
    out
}

// ── report emission ─────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_config_hash: String,
    pub masking: MaskingMode,
    pub n_examples: usize,
    pub pos: MetricsReport,
    pub contlex: MetricsReport,
}

/// Digest of the model configuration, so reports can be traced to the
/// exact architecture that produced them.
pub fn config_hash(config: &ModelConfig) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(config)?.as_bytes()))
}

pub fn build_report(
    config: &ModelConfig,
    masking: MaskingMode,
    pos: MetricsReport,
    contlex: MetricsReport,
) -> Result<EvalReport> {
    let n_examples = pos.n_examples;
    Ok(EvalReport { model_config_hash: config_hash(config)?, masking, n_examples, pos, contlex })
}

pub fn report_to_json(report: &EvalReport) -> Result<String> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    Ok(text)
}

pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    std::fs::write(path, report_to_json(report)?)
        .map_err(|e| Error::io_context(format!("cannot write report {}", path.display()), e))?;
    Ok(())
}
