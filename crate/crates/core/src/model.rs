//! Multi-task transformer classifier: shared embedding with sinusoidal
//! positional encoding, post-norm encoder layers (multi-head self-attention
//! + ReLU FFN), masked mean pooling, and two linear heads (POS, Contlex).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Rng, Scalar, Tensor, Var, MASK_FILL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub ffn_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub dropout: f64,
    pub max_len: usize,
    pub n_pos: usize,
    pub n_contlex: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Standard architecture; vocabulary and label counts come from the
    /// fitted tokenizer and label space.
    pub fn new(vocab_size: usize, n_pos: usize, n_contlex: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: 128,
            ffn_dim: 512,
            n_layers: 2,
            n_heads: 4,
            dropout: 0.1,
            max_len: 192,
            n_pos,
            n_contlex,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        for (what, n) in [
            ("vocab_size", self.vocab_size),
            ("ffn_dim", self.ffn_dim),
            ("n_layers", self.n_layers),
            ("max_len", self.max_len),
            ("n_pos", self.n_pos),
            ("n_contlex", self.n_contlex),
        ] {
            if n == 0 {
                return Err(Error::Config(format!("{what} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerParams {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_gamma: ParamId,
    ln1_beta: ParamId,
    ffn_w1: ParamId,
    ffn_b1: ParamId,
    ffn_w2: ParamId,
    ffn_b2: ParamId,
    ln2_gamma: ParamId,
    ln2_beta: ParamId,
}

pub struct TransformerClassifier<S: Scalar = f32> {
    pub config: ModelConfig,
    pub params: ParamStore<S>,
    embedding: ParamId,
    layers: Vec<LayerParams>,
    pos_head_w: ParamId,
    pos_head_b: ParamId,
    contlex_head_w: ParamId,
    contlex_head_b: ParamId,
    /// Fixed sinusoidal table, `max_len * d_model`, not a parameter.
    pos_table: Vec<S>,
}

/// A padded batch. `pad_mask` is true on real tokens.
#[derive(Debug, Clone)]
pub struct Batch {
    pub token_ids: Vec<usize>,
    pub pad_mask: Vec<bool>,
    pub batch: usize,
    pub seq: usize,
}

impl Batch {
    /// Pad to the longest sequence (capped at `max_len`; longer sequences
    /// keep their prefix so the lemma always survives truncation).
    pub fn from_sequences(seqs: &[Vec<usize>], max_len: usize) -> Result<Batch> {
        if seqs.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        if let Some(i) = seqs.iter().position(|s| s.is_empty()) {
            return Err(Error::Data(format!("sequence {i} is empty (all padding)")));
        }
        let seq = seqs.iter().map(|s| s.len()).max().unwrap().min(max_len);
        let mut token_ids = vec![crate::bpe::PAD; seqs.len() * seq];
        let mut pad_mask = vec![false; seqs.len() * seq];
        for (b, s) in seqs.iter().enumerate() {
            for (t, &id) in s.iter().take(seq).enumerate() {
                token_ids[b * seq + t] = id;
                pad_mask[b * seq + t] = true;
            }
        }
        Ok(Batch { token_ids, pad_mask, batch: seqs.len(), seq })
    }
}

/// Graph handles produced by one forward pass.
pub struct ForwardVars {
    pub pos_logits: Var,
    pub contlex_logits: Var,
    /// Per-layer attention weights, shape `[batch*heads, seq, seq]`.
    pub attentions: Vec<Var>,
}

fn sinusoidal_table<S: Scalar>(max_len: usize, d_model: usize) -> Vec<S> {
    let mut table = vec![S::ZERO; max_len * d_model];
    for pos in 0..max_len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            table[pos * d_model + 2 * i] = S::from_f64(angle.sin());
            table[pos * d_model + 2 * i + 1] = S::from_f64(angle.cos());
        }
    }
    table
}

impl<S: Scalar> TransformerClassifier<S> {
    /// Xavier-uniform weights, zero biases, unit layer-norm gains. Every
    /// parameter draws from its own name-keyed stream, so initialization is
    /// independent of construction order and bit-stable per seed.
    pub fn init(config: &ModelConfig) -> Result<TransformerClassifier<S>> {
        config.validate()?;
        let root = Rng::new(config.seed);
        let mut params = ParamStore::new();

        let xavier = |params: &mut ParamStore<S>, name: String, rows: usize, cols: usize| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            let mut rng = root.split(&format!("init/{name}"));
            let data = (0..rows * cols).map(|_| S::from_f64(rng.uniform(-a, a))).collect();
            params.push(name, Tensor::new(vec![rows, cols], data).expect("sized by construction"))
        };
        let zeros = |params: &mut ParamStore<S>, name: String, n: usize| {
            params.push(name, Tensor::zeros(vec![n]))
        };
        let ones = |params: &mut ParamStore<S>, name: String, n: usize| {
            params.push(name, Tensor::new(vec![n], vec![S::ONE; n]).expect("sized"))
        };

        let d = config.d_model;
        let embedding = xavier(&mut params, "embedding".into(), config.vocab_size, d);
        let mut layers = Vec::new();
        for l in 0..config.n_layers {
            let p = |part: &str| format!("layer{l}.{part}");
            layers.push(LayerParams {
                wq: xavier(&mut params, p("attn.wq"), d, d),
                bq: zeros(&mut params, p("attn.bq"), d),
                wk: xavier(&mut params, p("attn.wk"), d, d),
                bk: zeros(&mut params, p("attn.bk"), d),
                wv: xavier(&mut params, p("attn.wv"), d, d),
                bv: zeros(&mut params, p("attn.bv"), d),
                wo: xavier(&mut params, p("attn.wo"), d, d),
                bo: zeros(&mut params, p("attn.bo"), d),
                ln1_gamma: ones(&mut params, p("ln1.gamma"), d),
                ln1_beta: zeros(&mut params, p("ln1.beta"), d),
                ffn_w1: xavier(&mut params, p("ffn.w1"), d, config.ffn_dim),
                ffn_b1: zeros(&mut params, p("ffn.b1"), config.ffn_dim),
                ffn_w2: xavier(&mut params, p("ffn.w2"), config.ffn_dim, d),
                ffn_b2: zeros(&mut params, p("ffn.b2"), d),
                ln2_gamma: ones(&mut params, p("ln2.gamma"), d),
                ln2_beta: zeros(&mut params, p("ln2.beta"), d),
            });
        }
        let pos_head_w = xavier(&mut params, "pos_head.w".into(), d, config.n_pos);
        let pos_head_b = zeros(&mut params, "pos_head.b".into(), config.n_pos);
        let contlex_head_w = xavier(&mut params, "contlex_head.w".into(), d, config.n_contlex);
        let contlex_head_b = zeros(&mut params, "contlex_head.b".into(), config.n_contlex);

        Ok(TransformerClassifier {
            config: config.clone(),
            params,
            embedding,
            layers,
            pos_head_w,
            pos_head_b,
            contlex_head_w,
            contlex_head_b,
            pos_table: sinusoidal_table(config.max_len, d),
        })
    }

    /// Record the forward pass on `g`. PAD keys are masked out of attention
    /// and pooling, so appended padding cannot change any real output.
    pub fn forward(
        &self,
        g: &mut Graph<S>,
        batch: &Batch,
        training: bool,
        rng: &mut Rng,
    ) -> Result<ForwardVars> {
        let cfg = &self.config;
        let (bsz, seq, d, heads) = (batch.batch, batch.seq, cfg.d_model, cfg.n_heads);
        let dh = d / heads;
        if seq > cfg.max_len {
            return Err(Error::Shape(format!(
                "sequence length {seq} exceeds max_len {}",
                cfg.max_len
            )));
        }
        for b in 0..bsz {
            if !batch.pad_mask[b * seq..(b + 1) * seq].iter().any(|&m| m) {
                return Err(Error::Data(format!("batch row {b} is all padding")));
            }
        }

        let pvar = |g: &mut Graph<S>, id: ParamId| g.param(id, self.params.get(id));

        // Embedding, scaled by sqrt(d_model), plus positional encoding.
        let emb = pvar(g, self.embedding);
        let mut x = g.gather_rows(emb, &batch.token_ids)?;
        x = g.scale(x, S::from_f64((d as f64).sqrt()));
        let mut pe = vec![S::ZERO; bsz * seq * d];
        for b in 0..bsz {
            pe[b * seq * d..(b + 1) * seq * d].copy_from_slice(&self.pos_table[..seq * d]);
        }
        let pe = g.constant_from(vec![bsz * seq, d], pe)?;
        x = g.add(x, pe)?;
        x = g.dropout(x, cfg.dropout, training, rng)?;

        // Additive -inf bias on PAD keys; zero elsewhere.
        let key_bias: Vec<S> = batch
            .pad_mask
            .iter()
            .map(|&m| if m { S::ZERO } else { S::from_f64(MASK_FILL) })
            .collect();
        let inv_sqrt_dh = S::from_f64(1.0 / (dh as f64).sqrt());

        let mut attentions = Vec::new();
        for layer in &self.layers {
            // Projections stay in [B*S, d]; attention reshapes to
            // [B*heads, S, dh] per head.
            let wq = pvar(g, layer.wq);
            let bq = pvar(g, layer.bq);
            let wk = pvar(g, layer.wk);
            let bk = pvar(g, layer.bk);
            let wv = pvar(g, layer.wv);
            let bv = pvar(g, layer.bv);
            let q = g.matmul(x, wq)?;
            let q = g.add_bias(q, bq)?;
            let k = g.matmul(x, wk)?;
            let k = g.add_bias(k, bk)?;
            let v = g.matmul(x, wv)?;
            let v = g.add_bias(v, bv)?;

            let split = |g: &mut Graph<S>, t: Var| -> Result<Var> {
                let t = g.reshape(t, vec![bsz, seq, heads, dh])?;
                let t = g.swap12(t)?; // [B, H, S, dh]
                g.reshape(t, vec![bsz * heads, seq, dh])
            };
            let qh = split(g, q)?;
            let kh = split(g, k)?;
            let vh = split(g, v)?;

            let kt = g.transpose_last(kh)?; // [B*H, dh, S]
            let scores = g.bmm(qh, kt)?; // [B*H, S, S]
            let scores = g.scale(scores, inv_sqrt_dh);
            let scores = g.add_key_bias(scores, key_bias.clone(), heads)?;
            let attn = g.softmax(scores, 2)?;
            attentions.push(attn);
            let attn = g.dropout(attn, cfg.dropout, training, rng)?;

            let ctx = g.bmm(attn, vh)?; // [B*H, S, dh]
            let ctx = g.reshape(ctx, vec![bsz, heads, seq, dh])?;
            let ctx = g.swap12(ctx)?; // [B, S, H, dh]
            let ctx = g.reshape(ctx, vec![bsz * seq, d])?;
            let wo = pvar(g, layer.wo);
            let bo = pvar(g, layer.bo);
            let out = g.matmul(ctx, wo)?;
            let out = g.add_bias(out, bo)?;

            // Post-norm residual.
            let sum = g.add(x, out)?;
            let g1 = pvar(g, layer.ln1_gamma);
            let b1 = pvar(g, layer.ln1_beta);
            x = g.layer_norm(sum, g1, b1, S::from_f64(1e-5))?;

            let w1 = pvar(g, layer.ffn_w1);
            let fb1 = pvar(g, layer.ffn_b1);
            let w2 = pvar(g, layer.ffn_w2);
            let fb2 = pvar(g, layer.ffn_b2);
            let h = g.matmul(x, w1)?;
            let h = g.add_bias(h, fb1)?;
            let h = g.relu(h);
            let h = g.dropout(h, cfg.dropout, training, rng)?;
            let f = g.matmul(h, w2)?;
            let f = g.add_bias(f, fb2)?;

            let sum = g.add(x, f)?;
            let g2 = pvar(g, layer.ln2_gamma);
            let b2 = pvar(g, layer.ln2_beta);
            x = g.layer_norm(sum, g2, b2, S::from_f64(1e-5))?;
        }

        // Mean over real positions only.
        let mut pool_w = vec![S::ZERO; bsz * seq];
        for b in 0..bsz {
            let count =
                batch.pad_mask[b * seq..(b + 1) * seq].iter().filter(|&&m| m).count();
            let w = S::ONE / S::from_f64(count as f64);
            for t in 0..seq {
                if batch.pad_mask[b * seq + t] {
                    pool_w[b * seq + t] = w;
                }
            }
        }
        let x3 = g.reshape(x, vec![bsz, seq, d])?;
        let pooled = g.masked_mean(x3, pool_w)?; // [B, d]

        let pw = pvar(g, self.pos_head_w);
        let pb = pvar(g, self.pos_head_b);
        let pos_logits = g.matmul(pooled, pw)?;
        let pos_logits = g.add_bias(pos_logits, pb)?;
        let cw = pvar(g, self.contlex_head_w);
        let cb = pvar(g, self.contlex_head_b);
        let contlex_logits = g.matmul(pooled, cw)?;
        let contlex_logits = g.add_bias(contlex_logits, cb)?;

        Ok(ForwardVars { pos_logits, contlex_logits, attentions })
    }

    /// Eval-mode forward returning per-row logits for both heads.
    pub fn predict(&self, seqs: &[Vec<usize>]) -> Result<(Vec<Vec<S>>, Vec<Vec<S>>)> {
        let batch = Batch::from_sequences(seqs, self.config.max_len)?;
        let mut g = Graph::new();
        let mut rng = Rng::new(0); // eval path never draws
        let out = self.forward(&mut g, &batch, false, &mut rng)?;
        let rows = |v: Var, width: usize| -> Vec<Vec<S>> {
            g.value(v).chunks(width).map(|c| c.to_vec()).collect()
        };
        Ok((rows(out.pos_logits, self.config.n_pos), rows(out.contlex_logits, self.config.n_contlex)))
    }
}

// ── checkpointing ───────────────────────────────────────────────────────

const CKPT_MAGIC: &str = "mtc/v1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the blob that follows the header line.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct CkptHeader {
    magic: String,
    config: ModelConfig,
    epoch: usize,
    step: usize,
    tensors: Vec<TensorEntry>,
}

/// On-disk model state: single-line JSON header then a little-endian f32
/// blob. Extra tensors (optimizer moments, SWA averages) ride along under
/// their own names.
pub struct Checkpoint {
    pub config: ModelConfig,
    pub epoch: usize,
    pub step: usize,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut entries = Vec::new();
        let mut blob: Vec<u8> = Vec::new();
        for (name, shape, data) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset: blob.len(),
            });
            for v in data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = CkptHeader {
            magic: CKPT_MAGIC.into(),
            config: self.config.clone(),
            epoch: self.epoch,
            step: self.step,
            tensors: entries,
        };
        let mut bytes = serde_json::to_string(&header)?.into_bytes();
        bytes.push(b'\n');
        bytes.extend_from_slice(&blob);
        fs::write(path.as_ref(), bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let bytes = fs::read(path.as_ref())?;
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("checkpoint has no header line".into()))?;
        let header: CkptHeader = serde_json::from_slice(&bytes[..newline])?;
        if header.magic != CKPT_MAGIC {
            return Err(Error::Format(format!(
                "checkpoint magic {:?}, expected {CKPT_MAGIC:?}",
                header.magic
            )));
        }
        let blob = &bytes[newline + 1..];
        let mut tensors = Vec::new();
        let mut expected_len = 0;
        for e in &header.tensors {
            let numel: usize = e.shape.iter().product();
            let end = e.offset + 4 * numel;
            expected_len = expected_len.max(end);
            let slice = blob.get(e.offset..end).ok_or_else(|| {
                Error::Format(format!(
                    "checkpoint blob truncated: tensor {:?} needs bytes {}..{end}, blob has {}",
                    e.name,
                    e.offset,
                    blob.len()
                ))
            })?;
            let data: Vec<f32> =
                slice.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push((e.name.clone(), e.shape.clone(), data));
        }
        if blob.len() != expected_len {
            return Err(Error::Format(format!(
                "checkpoint blob has {} bytes, manifest accounts for {expected_len}",
                blob.len()
            )));
        }
        Ok(Checkpoint { config: header.config, epoch: header.epoch, step: header.step, tensors })
    }
}

impl TransformerClassifier<f32> {
    pub fn to_checkpoint(
        &self,
        epoch: usize,
        step: usize,
        extras: Vec<(String, Vec<usize>, Vec<f32>)>,
    ) -> Checkpoint {
        let mut tensors: Vec<(String, Vec<usize>, Vec<f32>)> = self
            .params
            .iter()
            .map(|(_, name, t)| (name.to_string(), t.shape().to_vec(), t.data().to_vec()))
            .collect();
        tensors.extend(extras);
        Checkpoint { config: self.config.clone(), epoch, step, tensors }
    }

    /// Rebuild a model from a checkpoint. Tensors that are not model
    /// parameters (optimizer moments etc.) are returned separately.
    #[allow(clippy::type_complexity)]
    pub fn from_checkpoint(
        ckpt: &Checkpoint,
    ) -> Result<(Self, Vec<(String, Vec<usize>, Vec<f32>)>)> {
        let mut model = Self::init(&ckpt.config)?;
        let mut filled = vec![false; model.params.len()];
        let mut extras = Vec::new();
        for (name, shape, data) in &ckpt.tensors {
            let found = model
                .params
                .iter()
                .find(|(_, n, _)| n == name)
                .map(|(id, _, _)| id);
            match found {
                Some(id) => {
                    let t = model.params.get_mut(id);
                    if t.shape() != shape.as_slice() {
                        return Err(Error::Format(format!(
                            "checkpoint tensor {name:?} has shape {shape:?}, model expects {:?}",
                            t.shape()
                        )));
                    }
                    t.data_mut().copy_from_slice(data);
                    filled[id.0] = true;
                }
                None => extras.push((name.clone(), shape.clone(), data.clone())),
            }
        }
        if let Some(missing) = filled.iter().position(|&f| !f) {
            return Err(Error::Format(format!(
                "checkpoint is missing parameter {:?}",
                model.params.name(ParamId(missing))
            )));
        }
        Ok((model, extras))
    }
}
