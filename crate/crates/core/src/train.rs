//! Training engine: combined multi-task loss, AdamW with decoupled weight
//! decay, per-epoch schedulers (cosine / exponential / reduce-on-plateau),
//! and stochastic weight averaging with a linear SWALR anneal for the
//! final phase.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Batch, TransformerClassifier};
use crate::numerics::{Graph, ParamStore, Rng, Scalar, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchedulerSpec {
    Cosine { t_max: usize, eta_min: f64 },
    Exponential { gamma: f64 },
    Plateau { patience: usize, factor: f64, min_lr: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub scheduler: SchedulerSpec,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    /// (w_pos, w_contlex) weights on the two cross-entropy terms.
    pub loss_weights: (f64, f64),
    pub swa_start_epoch: usize,
    pub swa_lr: f64,
    pub swa_anneal_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 512,
            lr: 0.003,
            scheduler: SchedulerSpec::Cosine { t_max: 25, eta_min: 0.0 },
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            eps: 1e-8,
            loss_weights: (1.0, 1.0),
            swa_start_epoch: 80,
            swa_lr: 5e-4,
            swa_anneal_epochs: 5,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::Config(format!(
                "epochs {} and batch_size {} must be at least 1",
                self.epochs, self.batch_size
            )));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if self.loss_weights.0 < 0.0 || self.loss_weights.1 < 0.0 {
            return Err(Error::Config(format!(
                "loss weights {:?} must be non-negative",
                self.loss_weights
            )));
        }
        if self.swa_start_epoch < 1 || self.swa_start_epoch > self.epochs {
            return Err(Error::Config(format!(
                "swa_start_epoch {} outside 1..={}",
                self.swa_start_epoch, self.epochs
            )));
        }
        Ok(())
    }

    /// Number of SWA snapshots a full run collects (one per epoch from
    /// `swa_start_epoch` through `epochs`, both inclusive).
    pub fn swa_snapshot_count(&self) -> usize {
        self.epochs - self.swa_start_epoch + 1
    }
}

/// One tokenized, label-encoded training example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub pos: usize,
    pub contlex: usize,
}

// ── loss ────────────────────────────────────────────────────────────────

/// `w_pos * CE(pos) + w_contlex * CE(contlex)`. Returns the combined loss
/// plus both summands (pre-weighting) for logging.
pub fn combined_loss<S: Scalar>(
    g: &mut Graph<S>,
    pos_logits: Var,
    contlex_logits: Var,
    pos_targets: &[usize],
    contlex_targets: &[usize],
    weights: (f64, f64),
) -> Result<(Var, Var, Var)> {
    if weights.0 < 0.0 || weights.1 < 0.0 {
        return Err(Error::Config(format!("loss weights {weights:?} must be non-negative")));
    }
    let ce_pos = g.cross_entropy(pos_logits, pos_targets)?;
    let ce_con = g.cross_entropy(contlex_logits, contlex_targets)?;
    let wp = g.scale(ce_pos, S::from_f64(weights.0));
    let wc = g.scale(ce_con, S::from_f64(weights.1));
    let total = g.add(wp, wc)?;
    Ok((total, ce_pos, ce_con))
}

// ── AdamW ───────────────────────────────────────────────────────────────

/// First/second moment buffers aligned with a [`ParamStore`]'s order.
#[derive(Debug, Clone)]
pub struct AdamState<S: Scalar = f32> {
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
    pub t: usize,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ParamStore<S>) -> Self {
        let m = params.iter().map(|(_, _, t)| vec![S::ZERO; t.numel()]).collect();
        let v = params.iter().map(|(_, _, t)| vec![S::ZERO; t.numel()]).collect();
        AdamState { m, v, t: 0 }
    }
}

/// One AdamW update over every parameter that has a gradient. Weight decay
/// is decoupled: `θ ← θ − lr·m̂/(√v̂+eps) − lr·wd·θ`.
pub fn adamw_step<S: Scalar>(
    params: &mut ParamStore<S>,
    state: &mut AdamState<S>,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
    weight_decay: f64,
) -> Result<()> {
    state.t += 1;
    let (b1, b2) = (S::from_f64(betas.0), S::from_f64(betas.1));
    let one_m_b1 = S::from_f64(1.0 - betas.0);
    let one_m_b2 = S::from_f64(1.0 - betas.1);
    let corr1 = S::from_f64(1.0 - betas.0.powi(state.t as i32));
    let corr2 = S::from_f64(1.0 - betas.1.powi(state.t as i32));
    let lr_s = S::from_f64(lr);
    let eps_s = S::from_f64(eps);
    let decay = S::from_f64(lr * weight_decay);

    let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        let tensor = params.get_mut(id);
        let Some(grad) = tensor.grad.take() else { continue };
        let m = &mut state.m[id.0];
        let v = &mut state.v[id.0];
        if m.len() != grad.len() {
            return Err(Error::Shape(format!(
                "optimizer state for param {} has {} elements, gradient has {}",
                id.0,
                m.len(),
                grad.len()
            )));
        }
        let data = tensor.data_mut();
        for i in 0..grad.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + one_m_b1 * g;
            v[i] = b2 * v[i] + one_m_b2 * g * g;
            let m_hat = m[i] / corr1;
            let v_hat = v[i] / corr2;
            data[i] = data[i] - lr_s * (m_hat / (v_hat.sqrt() + eps_s)) - decay * data[i];
        }
        tensor.grad = Some(grad);
        tensor.zero_grad();
    }
    Ok(())
}

// ── schedulers ──────────────────────────────────────────────────────────

/// Learning rate for a 0-based epoch index. The plateau variant replays
/// `monitor_history` (one value per completed epoch, mode max): `patience`
/// consecutive non-improving epochs multiply the lr by `factor`.
pub fn scheduler_lr(
    spec: &SchedulerSpec,
    epoch: usize,
    base_lr: f64,
    monitor_history: &[f64],
) -> f64 {
    match spec {
        SchedulerSpec::Cosine { t_max, eta_min } => {
            let phase = std::f64::consts::PI * epoch as f64 / *t_max as f64;
            eta_min + 0.5 * (base_lr - eta_min) * (1.0 + phase.cos())
        }
        SchedulerSpec::Exponential { gamma } => base_lr * gamma.powi(epoch as i32),
        SchedulerSpec::Plateau { patience, factor, min_lr } => {
            let mut lr = base_lr;
            let mut best = f64::NEG_INFINITY;
            let mut bad = 0usize;
            for &value in monitor_history {
                if value > best {
                    best = value;
                    bad = 0;
                } else {
                    bad += 1;
                    if bad >= *patience {
                        lr = (lr * factor).max(*min_lr);
                        bad = 0;
                    }
                }
            }
            lr
        }
    }
}

// ── stochastic weight averaging ─────────────────────────────────────────

/// Running mean of weight snapshots: `avg += (w − avg) / (n + 1)`.
#[derive(Debug, Clone)]
pub struct SwaState<S: Scalar = f32> {
    pub avg: Vec<Vec<S>>,
    pub n_averaged: usize,
}

impl<S: Scalar> SwaState<S> {
    pub fn new() -> Self {
        SwaState { avg: Vec::new(), n_averaged: 0 }
    }

    pub fn update(&mut self, params: &ParamStore<S>) -> Result<()> {
        if self.n_averaged == 0 {
            self.avg = params.iter().map(|(_, _, t)| t.data().to_vec()).collect();
            self.n_averaged = 1;
            return Ok(());
        }
        let snapshot: Vec<&[S]> = params.iter().map(|(_, _, t)| t.data()).collect();
        if snapshot.len() != self.avg.len()
            || snapshot.iter().zip(&self.avg).any(|(s, a)| s.len() != a.len())
        {
            return Err(Error::Shape("SWA state does not match parameter shapes".into()));
        }
        let inv = S::ONE / S::from_f64((self.n_averaged + 1) as f64);
        for (avg, snap) in self.avg.iter_mut().zip(snapshot) {
            for (a, &w) in avg.iter_mut().zip(snap) {
                *a += (w - *a) * inv;
            }
        }
        self.n_averaged += 1;
        Ok(())
    }

    /// Copy the averaged weights into `params`.
    pub fn write_into(&self, params: &mut ParamStore<S>) -> Result<()> {
        if self.n_averaged == 0 {
            return Err(Error::Usage("SWA state holds no snapshots".into()));
        }
        let ids: Vec<_> = params.iter().map(|(id, _, _)| id).collect();
        if ids.len() != self.avg.len() {
            return Err(Error::Shape("SWA state does not match parameter shapes".into()));
        }
        for id in ids {
            let t = params.get_mut(id);
            if t.numel() != self.avg[id.0].len() {
                return Err(Error::Shape("SWA state does not match parameter shapes".into()));
            }
            t.data_mut().copy_from_slice(&self.avg[id.0]);
        }
        Ok(())
    }
}

impl<S: Scalar> Default for SwaState<S> {
    fn default() -> Self {
        Self::new()
    }
}

// ── training loop ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_loss_pos: f64,
    pub train_loss_contlex: f64,
    pub val_pos_weighted_f1: f64,
    pub val_contlex_weighted_f1: f64,
    /// Mean of the two weighted F1 scores; drives checkpointing and the
    /// plateau scheduler.
    pub checkpoint_metric: f64,
    pub checkpoint_saved: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub swa_snapshots: usize,
    pub total_steps: usize,
}

pub struct TrainOutput {
    pub history: RunHistory,
    /// Weights at the best validation epoch.
    pub best: crate::model::Checkpoint,
    /// SWA-averaged model (the reported one).
    pub swa: TransformerClassifier<f32>,
}

/// Validation weighted F1 for both heads. Unmasked argmax: the checkpoint
/// metric stays independent of any label-space masking choice.
fn validation_scores(
    model: &TransformerClassifier<f32>,
    val: &[Example],
    eval_batch: usize,
) -> Result<(f64, f64)> {
    crate::eval::validation_weighted_f1(model, val, eval_batch)
}

pub fn train(
    model: &mut TransformerClassifier<f32>,
    train_set: &[Example],
    val_set: &[Example],
    config: &TrainConfig,
) -> Result<TrainOutput> {
    train_with_progress(model, train_set, val_set, config, |_| {})
}

/// [`train`] with a per-epoch observer (progress logging and the like).
pub fn train_with_progress(
    model: &mut TransformerClassifier<f32>,
    train_set: &[Example],
    val_set: &[Example],
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutput> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Config("train and validation sets must be non-empty".into()));
    }
    let n_contlex = model.config.n_contlex;
    let n_pos = model.config.n_pos;
    for ex in train_set.iter().chain(val_set) {
        if ex.pos >= n_pos || ex.contlex >= n_contlex {
            return Err(Error::Config(format!(
                "example label ({}, {}) outside model heads ({n_pos}, {n_contlex})",
                ex.pos, ex.contlex
            )));
        }
    }

    let root = Rng::new(config.seed);
    let mut adam = AdamState::new(&model.params);
    let mut swa = SwaState::new();
    let mut history = RunHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_metric: f64::NEG_INFINITY,
        swa_snapshots: 0,
        total_steps: 0,
    };
    let mut best_ckpt: Option<crate::model::Checkpoint> = None;
    let mut monitor: Vec<f64> = Vec::new();
    let mut lr_at_switch = config.lr;
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        let lr = if epoch < config.swa_start_epoch {
            let lr = scheduler_lr(&config.scheduler, epoch - 1, config.lr, &monitor);
            lr_at_switch = lr;
            lr
        } else {
            // SWALR: linear anneal from the last scheduled lr to swa_lr
            // over swa_anneal_epochs, then hold.
            let i = epoch - config.swa_start_epoch;
            let alpha =
                (((i + 1) as f64) / config.swa_anneal_epochs.max(1) as f64).min(1.0);
            (1.0 - alpha) * lr_at_switch + alpha * config.swa_lr
        };

        // Deterministic per-epoch shuffle.
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng = root.split(&format!("epoch{epoch}/shuffle"));
        shuffle_rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut loss_pos_sum = 0.0;
        let mut loss_con_sum = 0.0;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let seqs: Vec<Vec<usize>> =
                chunk.iter().map(|&i| train_set[i].tokens.clone()).collect();
            let pos_targets: Vec<usize> = chunk.iter().map(|&i| train_set[i].pos).collect();
            let con_targets: Vec<usize> =
                chunk.iter().map(|&i| train_set[i].contlex).collect();
            let batch = Batch::from_sequences(&seqs, model.config.max_len)?;

            let mut g = Graph::new();
            let mut dropout_rng = root.split(&format!("epoch{epoch}/batch{batch_idx}/dropout"));
            let out = model.forward(&mut g, &batch, true, &mut dropout_rng)?;
            let (total, ce_pos, ce_con) = combined_loss(
                &mut g,
                out.pos_logits,
                out.contlex_logits,
                &pos_targets,
                &con_targets,
                config.loss_weights,
            )?;
            let loss_val = g.scalar_value(total) as f64;
            if !loss_val.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_idx}"
                )));
            }
            let w = chunk.len() as f64;
            loss_sum += loss_val * w;
            loss_pos_sum += g.scalar_value(ce_pos) as f64 * w;
            loss_con_sum += g.scalar_value(ce_con) as f64 * w;

            let grads = g.backward(total)?;
            for (pid, grad) in grads.param_grads() {
                model.params.get_mut(pid).accumulate_grad(grad)?;
            }
            adamw_step(
                &mut model.params,
                &mut adam,
                lr,
                config.betas,
                config.eps,
                config.weight_decay,
            )?;
            step += 1;
        }
        let n = train_set.len() as f64;
        let (train_loss, train_loss_pos, train_loss_contlex) =
            (loss_sum / n, loss_pos_sum / n, loss_con_sum / n);

        if epoch >= config.swa_start_epoch {
            swa.update(&model.params)?;
            history.swa_snapshots += 1;
        }

        let (val_pos_f1, val_con_f1) = validation_scores(model, val_set, config.batch_size)?;
        let metric = 0.5 * (val_pos_f1 + val_con_f1);
        monitor.push(metric);

        let improved = metric > history.best_metric;
        if improved {
            history.best_metric = metric;
            history.best_epoch = epoch;
            best_ckpt = Some(model.to_checkpoint(epoch, step, Vec::new()));
        }
        let record = EpochRecord {
            epoch,
            lr,
            train_loss,
            train_loss_pos,
            train_loss_contlex,
            val_pos_weighted_f1: val_pos_f1,
            val_contlex_weighted_f1: val_con_f1,
            checkpoint_metric: metric,
            checkpoint_saved: improved,
        };
        progress(&record);
        history.epochs.push(record);
    }
    history.total_steps = step;

    let mut swa_model = TransformerClassifier::<f32>::init(&model.config)?;
    swa.write_into(&mut swa_model.params)?;
    Ok(TrainOutput {
        history,
        best: best_ckpt.expect("at least one epoch ran"),
        swa: swa_model,
    })
}

/// Serialize the run history as JSON lines: one epoch per line, then a
/// summary line.
pub fn history_to_jsonl(history: &RunHistory) -> Result<String> {
    let mut out = String::new();
    for e in &history.epochs {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    let summary = serde_json::json!({
        "best_epoch": history.best_epoch,
        "best_metric": history.best_metric,
        "swa_snapshots": history.swa_snapshots,
        "total_steps": history.total_steps,
    });
    out.push_str(&serde_json::to_string(&summary)?);
    out.push('\n');
    Ok(out)
}

/// One [`Example`] per line, JSON-encoded.
pub fn save_examples(examples: &[Example], path: &std::path::Path) -> Result<()> {
    let mut out = String::new();
    for e in examples {
        out.push_str(&serde_json::to_string(e)?);
        out.push('\n');
    }
    std::fs::write(path, out)
        .map_err(|e| Error::io_context(format!("cannot write examples {}", path.display()), e))
}

pub fn load_examples(path: &std::path::Path) -> Result<Vec<Example>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io_context(format!("cannot read examples {}", path.display()), e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
