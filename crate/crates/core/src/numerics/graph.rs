//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every forward op appends one node; construction order is already a
//! topological order, so the backward pass is a single reverse sweep that
//! visits each node exactly once. A graph is built per training step and
//! consumed by [`Graph::backward`].

use super::rng::Rng;
use super::tensor::{ParamId, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Additive value used to push masked attention keys to effectively -inf
/// before softmax while keeping every stored tensor finite. exp underflows
/// to exactly 0.0 for masked positions, so padding cannot leak into
/// unmasked ones.
pub const MASK_FILL: f64 = -1.0e30;

enum Op<S: Scalar> {
    Const,
    Param,
    Add { a: usize, b: usize },
    /// `b`'s shape is a suffix of `a`'s; `b` is tiled over the leading dims.
    AddBias { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, c: S },
    Matmul { a: usize, b: usize },
    Bmm { a: usize, b: usize },
    TransposeLast { x: usize },
    /// Swap axes 1 and 2 of a rank-4 tensor.
    Swap12 { x: usize },
    Reshape { x: usize },
    Relu { x: usize },
    Softmax { x: usize, axis: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, inv_std: Vec<S>, xhat: Vec<S> },
    CrossEntropy { logits: usize, probs: Vec<S>, batch: usize, targets: Vec<usize> },
    Dropout { x: usize, mask: Vec<S> },
    GatherRows { table: usize, ids: Vec<usize> },
    /// Adds a constant `bias[b, j]` to every score `[b*heads + h, i, j]`;
    /// the gradient passes through unchanged, so only `x` is kept.
    AddKeyBias { x: usize },
    /// Weighted sum over the sequence axis: `[B,S,D] x [B,S] -> [B,D]`.
    MaskedMean { x: usize, weights: Vec<S> },
    SumAll { x: usize },
}

struct Node<S: Scalar> {
    op: Op<S>,
    shape: Vec<usize>,
    value: Vec<S>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`]. Indexed either by the original
/// [`Var`] handles or by the parameter ids registered with
/// [`Graph::param`].
pub struct Gradients<S: Scalar> {
    grads: Vec<Option<Vec<S>>>,
    params: Vec<(ParamId, usize)>,
}

impl<S: Scalar> Gradients<S> {
    pub fn wrt(&self, v: Var) -> Option<&[S]> {
        self.grads[v.0].as_deref()
    }

    /// Gradients for every registered parameter leaf, in registration order.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[S])> {
        self.params
            .iter()
            .filter_map(move |&(pid, node)| self.grads[node].as_deref().map(|g| (pid, g)))
    }
}

pub struct Graph<S: Scalar = f32> {
    nodes: Vec<Node<S>>,
    params: Vec<(ParamId, usize)>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

// ── raw matmul kernels ──────────────────────────────────────────────────

/// C[m,n] = A[m,k] * B[k,n]
fn mm_nn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow) {
                *c += av * bv;
            }
        }
    }
}

/// C[m,k] += A[m,n] * B[k,n]^T  (B accessed by rows)
fn mm_nt<S: Scalar>(a: &[S], b: &[S], m: usize, n: usize, k: usize, out: &mut [S]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = S::ZERO;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            out[i * k + p] += acc;
        }
    }
}

/// C[k,n] += A[m,k]^T * B[m,n]
fn mm_tn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize, out: &mut [S]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let crow = &mut out[p * n..(p + 1) * n];
            for (c, &bv) in crow.iter_mut().zip(brow) {
                *c += av * bv;
            }
        }
    }
}

fn lane_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let lane = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, lane, inner)
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), params: Vec::new() }
    }

    fn push(&mut self, op: Op<S>, shape: Vec<usize>, value: Vec<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node { op, shape, value, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[S] {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> S {
        self.nodes[v.0].value[0]
    }

    /// Error if any node holds a non-finite value. Finite inputs must stay
    /// finite through every op; a NaN/Inf anywhere is an error state.
    pub fn check_finite(&self) -> Result<()> {
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.value.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite value in graph node {i}")));
            }
        }
        Ok(())
    }

    // ── leaves ──────────────────────────────────────────────────────────

    pub fn constant(&mut self, tensor: &Tensor<S>) -> Var {
        self.push(Op::Const, tensor.shape().to_vec(), tensor.data().to_vec(), false)
    }

    pub fn constant_from(&mut self, shape: Vec<usize>, data: Vec<S>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.constant(&t))
    }

    /// Leaf bound to a parameter; its gradient is retrievable by `id` after
    /// the backward pass.
    pub fn param(&mut self, id: ParamId, tensor: &Tensor<S>) -> Var {
        let v = self.push(
            Op::Param,
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            tensor.requires_grad,
        );
        self.params.push((id, v.0));
        v
    }

    /// Leaf with `requires_grad` set, for tests and gradient checks.
    pub fn leaf(&mut self, tensor: &Tensor<S>) -> Var {
        self.push(Op::Const, tensor.shape().to_vec(), tensor.data().to_vec(), true)
    }

    // ── elementwise and shape ops ───────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "add: shapes {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let value: Vec<S> =
            self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add { a: a.0, b: b.0 }, self.nodes[a.0].shape.clone(), value, rg))
    }

    pub fn add_bias(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || &sa[sa.len() - sb.len()..] != sb {
            return Err(Error::Shape(format!("add_bias: {sb:?} is not a suffix of {sa:?}")));
        }
        let bn = self.nodes[b.0].value.len();
        let value: Vec<S> = self
            .value(a)
            .iter()
            .enumerate()
            .map(|(i, &x)| x + self.nodes[b.0].value[i % bn])
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::AddBias { a: a.0, b: b.0 }, self.nodes[a.0].shape.clone(), value, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "mul: shapes {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let value: Vec<S> =
            self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul { a: a.0, b: b.0 }, self.nodes[a.0].shape.clone(), value, rg))
    }

    pub fn scale(&mut self, x: Var, c: S) -> Var {
        let value: Vec<S> = self.value(x).iter().map(|&v| v * c).collect();
        let rg = self.rg(x);
        self.push(Op::Scale { x: x.0, c }, self.nodes[x.0].shape.clone(), value, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x.0].value.len() {
            return Err(Error::Shape(format!(
                "reshape: {:?} -> {shape:?} changes element count",
                self.shape(x)
            )));
        }
        let value = self.nodes[x.0].value.clone();
        let rg = self.rg(x);
        Ok(self.push(Op::Reshape { x: x.0 }, shape, value, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value: Vec<S> =
            self.value(x).iter().map(|&v| if v > S::ZERO { v } else { S::ZERO }).collect();
        let rg = self.rg(x);
        self.push(Op::Relu { x: x.0 }, self.nodes[x.0].shape.clone(), value, rg)
    }

    // ── matrix products ─────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape(format!("matmul: {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut value = vec![S::ZERO; m * n];
        mm_nn(self.value(a), self.value(b), m, k, n, &mut value);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Matmul { a: a.0, b: b.0 }, vec![m, n], value, rg))
    }

    /// Batched matmul: `[n,m,k] x [n,k,p] -> [n,m,p]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::Shape(format!("bmm: {sa:?} x {sb:?}")));
        }
        let (nb, m, k, p) = (sa[0], sa[1], sa[2], sb[2]);
        let mut value = vec![S::ZERO; nb * m * p];
        for i in 0..nb {
            mm_nn(
                &self.value(a)[i * m * k..(i + 1) * m * k],
                &self.value(b)[i * k * p..(i + 1) * k * p],
                m,
                k,
                p,
                &mut value[i * m * p..(i + 1) * m * p],
            );
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Bmm { a: a.0, b: b.0 }, vec![nb, m, p], value, rg))
    }

    /// Swap the last two axes of a rank-3 tensor.
    pub fn transpose_last(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(Error::Shape(format!("transpose_last: rank-3 expected, got {s:?}")));
        }
        let (nb, m, k) = (s[0], s[1], s[2]);
        let value = transpose_batch(self.value(x), nb, m, k);
        let rg = self.rg(x);
        Ok(self.push(Op::TransposeLast { x: x.0 }, vec![nb, k, m], value, rg))
    }

    /// Swap axes 1 and 2 of a rank-4 tensor: `[a,b,c,d] -> [a,c,b,d]`.
    pub fn swap12(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 4 {
            return Err(Error::Shape(format!("swap12: rank-4 expected, got {s:?}")));
        }
        let (a, b, c, d) = (s[0], s[1], s[2], s[3]);
        let value = swap12_raw(self.value(x), a, b, c, d);
        let rg = self.rg(x);
        Ok(self.push(Op::Swap12 { x: x.0 }, vec![a, c, b, d], value, rg))
    }

    // ── nonlinearities ──────────────────────────────────────────────────

    /// exp-normalized along `axis` with max-subtraction; each slice along
    /// the axis sums to 1.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x);
        if axis >= s.len() {
            return Err(Error::Usage(format!("softmax: axis {axis} out of range for {s:?}")));
        }
        let (outer, lane, inner) = lane_dims(s, axis);
        let xv = self.value(x);
        let mut value = vec![S::ZERO; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * lane + l) * inner + i;
                let mut mx = xv[at(0)];
                for l in 1..lane {
                    mx = mx.maximum(xv[at(l)]);
                }
                let mut denom = S::ZERO;
                for l in 0..lane {
                    let e = (xv[at(l)] - mx).exp();
                    value[at(l)] = e;
                    denom += e;
                }
                for l in 0..lane {
                    value[at(l)] = value[at(l)] / denom;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Op::Softmax { x: x.0, axis }, s.to_vec(), value, rg))
    }

    /// Normalize the last axis to mean 0 / biased variance 1, then apply
    /// the affine map `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: S) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let d = *s.last().ok_or_else(|| Error::Shape("layer_norm: rank-0 input".into()))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::Shape(format!(
                "layer_norm: gamma/beta must be [{d}], got {:?}/{:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let rows = self.nodes[x.0].value.len() / d;
        let inv_d = S::ONE / S::from_f64(d as f64);
        let mut xhat = vec![S::ZERO; rows * d];
        let mut inv_std = vec![S::ZERO; rows];
        let mut value = vec![S::ZERO; rows * d];
        {
            let xv = self.value(x);
            let gv = &self.nodes[gamma.0].value;
            let bv = &self.nodes[beta.0].value;
            for r in 0..rows {
                let row = &xv[r * d..(r + 1) * d];
                let mut mean = S::ZERO;
                for &v in row {
                    mean += v;
                }
                mean = mean * inv_d;
                let mut var = S::ZERO;
                for &v in row {
                    let c = v - mean;
                    var += c * c;
                }
                var = var * inv_d;
                let istd = S::ONE / (var + eps).sqrt();
                inv_std[r] = istd;
                for j in 0..d {
                    let h = (row[j] - mean) * istd;
                    xhat[r * d + j] = h;
                    value[r * d + j] = gv[j] * h + bv[j];
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, inv_std, xhat },
            s,
            value,
            rg,
        ))
    }

    /// Mean over the batch of `-log softmax(logits)[target]`, computed via
    /// log-sum-exp so huge logits cannot overflow.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 {
            return Err(Error::Shape(format!("cross_entropy: logits must be [B,C], got {s:?}")));
        }
        let (bsz, classes) = (s[0], s[1]);
        if targets.len() != bsz {
            return Err(Error::Shape(format!(
                "cross_entropy: {} targets for batch of {bsz}",
                targets.len()
            )));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= classes) {
            return Err(Error::Lookup(format!(
                "cross_entropy: target {t} out of range for {classes} classes"
            )));
        }
        let xv = self.value(logits);
        let mut probs = vec![S::ZERO; bsz * classes];
        let mut total = S::ZERO;
        for b in 0..bsz {
            let row = &xv[b * classes..(b + 1) * classes];
            let mut mx = row[0];
            for &v in &row[1..] {
                mx = mx.maximum(v);
            }
            let mut denom = S::ZERO;
            for &v in row {
                denom += (v - mx).exp();
            }
            let lse = mx + denom.ln();
            total += lse - row[targets[b]];
            for j in 0..classes {
                probs[b * classes + j] = (row[j] - lse).exp();
            }
        }
        let value = vec![total / S::from_f64(bsz as f64)];
        let rg = self.rg(logits);
        Ok(self.push(
            Op::CrossEntropy { logits: logits.0, probs, batch: bsz, targets: targets.to_vec() },
            vec![1],
            value,
            rg,
        ))
    }

    /// Inverted dropout: zero with probability `p` and scale survivors by
    /// `1/(1-p)` while training; the eval path returns `x` untouched.
    pub fn dropout(&mut self, x: Var, p: f64, training: bool, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0,1)")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep_scale = S::from_f64(1.0 / (1.0 - p));
        let mask: Vec<S> = (0..self.nodes[x.0].value.len())
            .map(|_| if rng.next_f64() < p { S::ZERO } else { keep_scale })
            .collect();
        let value: Vec<S> = self.value(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let rg = self.rg(x);
        Ok(self.push(Op::Dropout { x: x.0, mask }, self.nodes[x.0].shape.clone(), value, rg))
    }

    // ── structured ops for the classifier ───────────────────────────────

    /// Row lookup into `table[V,D]`: `out[i,:] = table[ids[i],:]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table);
        if s.len() != 2 {
            return Err(Error::Shape(format!("gather_rows: table must be [V,D], got {s:?}")));
        }
        let (v, d) = (s[0], s[1]);
        if let Some(&id) = ids.iter().find(|&&id| id >= v) {
            return Err(Error::Lookup(format!("gather_rows: id {id} out of range for {v} rows")));
        }
        let tv = self.value(table);
        let mut value = vec![S::ZERO; ids.len() * d];
        for (i, &id) in ids.iter().enumerate() {
            value[i * d..(i + 1) * d].copy_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Op::GatherRows { table: table.0, ids: ids.to_vec() },
            vec![ids.len(), d],
            value,
            rg,
        ))
    }

    /// Add a per-(batch, key) bias to attention scores shaped
    /// `[batch*heads, S, S]`. The bias is a constant; gradients pass through.
    pub fn add_key_bias(&mut self, x: Var, bias: Vec<S>, heads: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 || s[1] != s[2] || s[0] % heads != 0 {
            return Err(Error::Shape(format!("add_key_bias: scores {s:?} with {heads} heads")));
        }
        let (bh, seq) = (s[0], s[1]);
        let batch = bh / heads;
        if bias.len() != batch * seq {
            return Err(Error::Shape(format!(
                "add_key_bias: bias len {} != {batch}x{seq}",
                bias.len()
            )));
        }
        let xv = self.value(x);
        let mut value = vec![S::ZERO; xv.len()];
        for g in 0..bh {
            let b = g / heads;
            for i in 0..seq {
                let base = (g * seq + i) * seq;
                for j in 0..seq {
                    value[base + j] = xv[base + j] + bias[b * seq + j];
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Op::AddKeyBias { x: x.0 }, s.to_vec(), value, rg))
    }

    /// Weighted sum over the sequence axis with constant weights
    /// (`[B,S,D] -> [B,D]`). With weights `mask/count` this is mean pooling
    /// over non-PAD positions.
    pub fn masked_mean(&mut self, x: Var, weights: Vec<S>) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(Error::Shape(format!("masked_mean: rank-3 expected, got {s:?}")));
        }
        let (bsz, seq, d) = (s[0], s[1], s[2]);
        if weights.len() != bsz * seq {
            return Err(Error::Shape(format!(
                "masked_mean: weights len {} != {bsz}x{seq}",
                weights.len()
            )));
        }
        let xv = self.value(x);
        let mut value = vec![S::ZERO; bsz * d];
        for b in 0..bsz {
            for t in 0..seq {
                let w = weights[b * seq + t];
                if w == S::ZERO {
                    continue;
                }
                let row = &xv[(b * seq + t) * d..(b * seq + t + 1) * d];
                let out = &mut value[b * d..(b + 1) * d];
                for (o, &v) in out.iter_mut().zip(row) {
                    *o += w * v;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Op::MaskedMean { x: x.0, weights }, vec![bsz, d], value, rg))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let mut total = S::ZERO;
        for &v in self.value(x) {
            total += v;
        }
        let rg = self.rg(x);
        self.push(Op::SumAll { x: x.0 }, vec![1], vec![total], rg)
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Consumes the graph; gradients
    /// accumulate by summation when a value feeds several ops.
    pub fn backward(self, loss: Var) -> Result<Gradients<S>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::ONE]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(idx, &g, &mut grads);
            // Keep gradients addressable for leaves and for callers probing
            // intermediate vars.
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, params: self.params })
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Vec<S>>], target: usize, add: impl Fn(&mut [S])) {
        if !self.needs(target) {
            return;
        }
        let buf = grads[target].get_or_insert_with(|| vec![S::ZERO; self.nodes[target].value.len()]);
        add(buf);
    }

    fn backprop_node(&self, idx: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        match &self.nodes[idx].op {
            Op::Const | Op::Param => {}
            Op::Add { a, b } => {
                self.accumulate(grads, *a, |buf| {
                    for (d, &s) in buf.iter_mut().zip(g) {
                        *d += s;
                    }
                });
                self.accumulate(grads, *b, |buf| {
                    for (d, &s) in buf.iter_mut().zip(g) {
                        *d += s;
                    }
                });
            }
            Op::AddBias { a, b } => {
                self.accumulate(grads, *a, |buf| {
                    for (d, &s) in buf.iter_mut().zip(g) {
                        *d += s;
                    }
                });
                let bn = self.nodes[*b].value.len();
                self.accumulate(grads, *b, |buf| {
                    for (i, &s) in g.iter().enumerate() {
                        buf[i % bn] += s;
                    }
                });
            }
            Op::Mul { a, b } => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                self.accumulate(grads, *a, |buf| {
                    for ((d, &s), &y) in buf.iter_mut().zip(g).zip(bv.iter()) {
                        *d += s * y;
                    }
                });
                self.accumulate(grads, *b, |buf| {
                    for ((d, &s), &x) in buf.iter_mut().zip(g).zip(av.iter()) {
                        *d += s * x;
                    }
                });
            }
            Op::Scale { x, c } => {
                let c = *c;
                self.accumulate(grads, *x, |buf| {
                    for (d, &s) in buf.iter_mut().zip(g) {
                        *d += s * c;
                    }
                });
            }
            Op::Matmul { a, b } => {
                let (sa, sb) = (&self.nodes[*a].shape, &self.nodes[*b].shape);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                // dA = dC * B^T, dB = A^T * dC
                self.accumulate(grads, *a, |buf| {
                    mm_nt(g, &self.nodes[*b].value, m, n, k, buf);
                });
                self.accumulate(grads, *b, |buf| {
                    mm_tn(&self.nodes[*a].value, g, m, k, n, buf);
                });
            }
            Op::Bmm { a, b } => {
                let (sa, sb) = (&self.nodes[*a].shape, &self.nodes[*b].shape);
                let (nb, m, k, p) = (sa[0], sa[1], sa[2], sb[2]);
                self.accumulate(grads, *a, |buf| {
                    for i in 0..nb {
                        mm_nt(
                            &g[i * m * p..(i + 1) * m * p],
                            &self.nodes[*b].value[i * k * p..(i + 1) * k * p],
                            m,
                            p,
                            k,
                            &mut buf[i * m * k..(i + 1) * m * k],
                        );
                    }
                });
                self.accumulate(grads, *b, |buf| {
                    for i in 0..nb {
                        mm_tn(
                            &self.nodes[*a].value[i * m * k..(i + 1) * m * k],
                            &g[i * m * p..(i + 1) * m * p],
                            m,
                            k,
                            p,
                            &mut buf[i * k * p..(i + 1) * k * p],
                        );
                    }
                });
            }
            Op::TransposeLast { x } => {
                let s = &self.nodes[idx].shape; // [nb, k, m]
                let (nb, k, m) = (s[0], s[1], s[2]);
                let gt = transpose_batch(g, nb, k, m);
                self.accumulate(grads, *x, |buf| {
                    for (d, &s) in buf.iter_mut().zip(&gt) {
                        *d += s;
                    }
                });
            }
            Op::Swap12 { x } => {
                let s = &self.nodes[idx].shape; // [a, c, b, d]
                let gt = swap12_raw(g, s[0], s[1], s[2], s[3]);
                self.accumulate(grads, *x, |buf| {
                    for (d, &s) in buf.iter_mut().zip(&gt) {
                        *d += s;
                    }
                });
            }
            Op::Reshape { x } => {
                self.accumulate(grads, *x, |buf| {
                    for (d, &s) in buf.iter_mut().zip(g) {
                        *d += s;
                    }
                });
            }
            Op::Relu { x } => {
                let xv = &self.nodes[*x].value;
                self.accumulate(grads, *x, |buf| {
                    for ((d, &s), &v) in buf.iter_mut().zip(g).zip(xv.iter()) {
                        if v > S::ZERO {
                            *d += s;
                        }
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let y = &self.nodes[idx].value;
                let (outer, lane, inner) = lane_dims(&self.nodes[idx].shape, *axis);
                self.accumulate(grads, *x, |buf| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |l: usize| (o * lane + l) * inner + i;
                            let mut dot = S::ZERO;
                            for l in 0..lane {
                                dot += g[at(l)] * y[at(l)];
                            }
                            for l in 0..lane {
                                buf[at(l)] += y[at(l)] * (g[at(l)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm { x, gamma, beta, inv_std, xhat } => {
                let d = *self.nodes[idx].shape.last().unwrap();
                let rows = xhat.len() / d;
                let gv = &self.nodes[*gamma].value;
                let inv_d = S::ONE / S::from_f64(d as f64);
                self.accumulate(grads, *x, |buf| {
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut mean_dh = S::ZERO;
                        let mut mean_dh_h = S::ZERO;
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                        }
                        mean_dh = mean_dh * inv_d;
                        mean_dh_h = mean_dh_h * inv_d;
                        let out = &mut buf[r * d..(r + 1) * d];
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            out[j] += inv_std[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                });
                self.accumulate(grads, *gamma, |buf| {
                    for r in 0..rows {
                        for j in 0..d {
                            buf[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                });
                self.accumulate(grads, *beta, |buf| {
                    for r in 0..rows {
                        for j in 0..d {
                            buf[j] += g[r * d + j];
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, probs, batch, targets } => {
                let classes = probs.len() / batch;
                let gs = g[0] / S::from_f64(*batch as f64);
                self.accumulate(grads, *logits, |buf| {
                    for b in 0..*batch {
                        for j in 0..classes {
                            let indicator = if targets[b] == j { S::ONE } else { S::ZERO };
                            buf[b * classes + j] += gs * (probs[b * classes + j] - indicator);
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => {
                self.accumulate(grads, *x, |buf| {
                    for ((d, &s), &m) in buf.iter_mut().zip(g).zip(mask.iter()) {
                        *d += s * m;
                    }
                });
            }
            Op::GatherRows { table, ids } => {
                let d = self.nodes[idx].shape[1];
                self.accumulate(grads, *table, |buf| {
                    for (i, &id) in ids.iter().enumerate() {
                        let src = &g[i * d..(i + 1) * d];
                        let dst = &mut buf[id * d..(id + 1) * d];
                        for (dv, &sv) in dst.iter_mut().zip(src) {
                            *dv += sv;
                        }
                    }
                });
            }
            Op::AddKeyBias { x } => {
                self.accumulate(grads, *x, |buf| {
                    for (d, &s) in buf.iter_mut().zip(g) {
                        *d += s;
                    }
                });
            }
            Op::MaskedMean { x, weights } => {
                let s = &self.nodes[*x].shape;
                let (bsz, seq, d) = (s[0], s[1], s[2]);
                self.accumulate(grads, *x, |buf| {
                    for b in 0..bsz {
                        let gr = &g[b * d..(b + 1) * d];
                        for t in 0..seq {
                            let w = weights[b * seq + t];
                            if w == S::ZERO {
                                continue;
                            }
                            let dst = &mut buf[(b * seq + t) * d..(b * seq + t + 1) * d];
                            for (dv, &sv) in dst.iter_mut().zip(gr) {
                                *dv += w * sv;
                            }
                        }
                    }
                });
            }
            Op::SumAll { x } => {
                let gs = g[0];
                self.accumulate(grads, *x, |buf| {
                    for d in buf.iter_mut() {
                        *d += gs;
                    }
                });
            }
        }
    }
}

fn transpose_batch<S: Scalar>(x: &[S], nb: usize, m: usize, k: usize) -> Vec<S> {
    let mut out = vec![S::ZERO; x.len()];
    for b in 0..nb {
        let src = &x[b * m * k..(b + 1) * m * k];
        let dst = &mut out[b * m * k..(b + 1) * m * k];
        for i in 0..m {
            for j in 0..k {
                dst[j * m + i] = src[i * k + j];
            }
        }
    }
    out
}

fn swap12_raw<S: Scalar>(x: &[S], a: usize, b: usize, c: usize, d: usize) -> Vec<S> {
    let mut out = vec![S::ZERO; x.len()];
    for i in 0..a {
        for j in 0..b {
            for k in 0..c {
                let src = &x[((i * b + j) * c + k) * d..((i * b + j) * c + k + 1) * d];
                let dst = &mut out[((i * c + k) * b + j) * d..((i * c + k) * b + j + 1) * d];
                dst.copy_from_slice(src);
            }
        }
    }
    out
}
