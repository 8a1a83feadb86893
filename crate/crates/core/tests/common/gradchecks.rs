//! Central finite-difference verification at 64-bit for every
//! differentiable graph op and for the assembled classifier. Op inputs are
//! fixed pseudo-random values kept away from the relu kink; reductions go
//! through a weighted sum so ops with row-constant outputs (softmax, layer
//! norm) still produce non-trivial gradients.

use morphclass::model::{Batch, ModelConfig, TransformerClassifier};
use morphclass::numerics::gradcheck::check;
use morphclass::numerics::{Graph, Rng, Tensor, Var};
use morphclass::train::combined_loss;
use morphclass::Result;

fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).expect("test tensor shape")
}

fn rand_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-1.5, 1.5)).collect()
}

/// Values bounded away from zero so the relu kink cannot sit inside a
/// finite-difference interval.
fn rand_vec_off_zero(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v = rng.uniform(0.2, 1.5);
            if rng.next_u64() % 2 == 0 {
                v
            } else {
                -v
            }
        })
        .collect()
}

fn weighted_sum(g: &mut Graph<f64>, x: Var, weights: &[f64]) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let w = g.constant_from(shape, weights.to_vec())?;
    let wx = g.mul(x, w)?;
    Ok(g.sum_all(wx))
}

/// (op name, max relative error) for every differentiable op. Binary ops are
/// checked with respect to each operand.
pub fn op_checks() -> Result<Vec<(&'static str, f64)>> {
    let mut rng = Rng::new(0xC0FFEE).split("gradcheck/ops");
    let mut out: Vec<(&'static str, f64)> = Vec::new();

    // add: z = a + b
    {
        let a0 = rand_vec(&mut rng, 6);
        let b0 = rand_vec(&mut rng, 6);
        let w = rand_vec(&mut rng, 6);
        let (b1, w1) = (b0.clone(), w.clone());
        out.push((
            "add wrt left",
            check(&a0, move |v| {
                let mut g = Graph::<f64>::new();
                let a = g.leaf(&t64(&[2, 3], v));
                let b = g.constant_from(vec![2, 3], b1.clone())?;
                let z = g.add(a, b)?;
                let loss = weighted_sum(&mut g, z, &w1)?;
                Ok((g, a, loss))
            })?,
        ));
        let (a1, w2) = (a0.clone(), w.clone());
        out.push((
            "add wrt right",
            check(&b0, move |v| {
                let mut g = Graph::<f64>::new();
                let a = g.constant_from(vec![2, 3], a1.clone())?;
                let b = g.leaf(&t64(&[2, 3], v));
                let z = g.add(a, b)?;
                let loss = weighted_sum(&mut g, z, &w2)?;
                Ok((g, b, loss))
            })?,
        ));
    }

    // add_bias: z = a + broadcast(b)
    {
        let a0 = rand_vec(&mut rng, 12);
        let b0 = rand_vec(&mut rng, 4);
        let w = rand_vec(&mut rng, 12);
        let (b1, w1) = (b0.clone(), w.clone());
        out.push((
            "add_bias wrt matrix",
            check(&a0, move |v| {
                let mut g = Graph::<f64>::new();
                let a = g.leaf(&t64(&[3, 4], v));
                let b = g.constant_from(vec![4], b1.clone())?;
                let z = g.add_bias(a, b)?;
                let loss = weighted_sum(&mut g, z, &w1)?;
                Ok((g, a, loss))
            })?,
        ));
        let (a1, w2) = (a0.clone(), w.clone());
        out.push((
            "add_bias wrt bias",
            check(&b0, move |v| {
                let mut g = Graph::<f64>::new();
                let a = g.constant_from(vec![3, 4], a1.clone())?;
                let b = g.leaf(&t64(&[4], v));
                let z = g.add_bias(a, b)?;
                let loss = weighted_sum(&mut g, z, &w2)?;
                Ok((g, b, loss))
            })?,
        ));
    }

    // mul: elementwise product
    {
        let a0 = rand_vec(&mut rng, 8);
        let b0 = rand_vec(&mut rng, 8);
        let w = rand_vec(&mut rng, 8);
        let (b1, w1) = (b0.clone(), w.clone());
        out.push((
            "mul wrt left",
            check(&a0, move |v| {
                let mut g = Graph::<f64>::new();
                let a = g.leaf(&t64(&[2, 4], v));
                let b = g.constant_from(vec![2, 4], b1.clone())?;
                let z = g.mul(a, b)?;
                let loss = weighted_sum(&mut g, z, &w1)?;
                Ok((g, a, loss))
            })?,
        ));
        let (a1, w2) = (a0.clone(), w.clone());
        out.push((
            "mul wrt right",
            check(&b0, move |v| {
                let mut g = Graph::<f64>::new();
                let a = g.constant_from(vec![2, 4], a1.clone())?;
                let b = g.leaf(&t64(&[2, 4], v));
                let z = g.mul(a, b)?;
                let loss = weighted_sum(&mut g, z, &w2)?;
                Ok((g, b, loss))
            })?,
        ));
    }

    // scale by a constant
    {
        let x0 = rand_vec(&mut rng, 6);
        let w = rand_vec(&mut rng, 6);
        out.push((
            "scale",
            check(&x0, move |v| {
                let mut g = Graph::<f64>::new();
                let x = g.leaf(&t64(&[6], v));
                let z = g.scale(x, -1.7);
                let loss = weighted_sum(&mut g, z, &w)?;
                Ok((g, x, loss))
            })?,
        ));
    }

    // reshape is a gradient pass-through
    {
        let x0 = rand_vec(&mut rng, 12);
        let w = rand_vec(&mut rng, 12);
        out.push((
            "reshape",
            check(&x0, move |v| {
                let mut g = Graph::<f64>::new();
                let x = g.leaf(&t64(&[2, 6], v));
                let z = g.reshape(x, vec![3, 4])?;
                let loss = weighted_sum(&mut g, z, &w)?;
                Ok((g, x, loss))
            })?,
        ));
    }

    // relu, inputs bounded away from the kink
    {
        let x0 = rand_vec_off_zero(&mut rng, 10);
        let w = rand_vec(&mut rng, 10);
        out.push((
            "relu",
            check(&x0, move |v| {
                let mut g = Graph::<f64>::new();
                let x = g.leaf(&t64(&[10], v));
                let z = g.relu(x);
                let loss = weighted_sum(&mut g, z, &w)?;
                Ok((g, x, loss))
            })?,
        ));
    }

    // matmul: [3,4] x [4,2]
    {
        let a0 = rand_vec(&mut rng, 12);
        let b0 = rand_vec(&mut rng, 8);
        let w = rand_vec(&mut rng, 6);
        let (b1, w1) = (b0.clone(), w.clone());
        out.push((
            "matmul wrt left",
            check(&a0, move |v| {
                let mut g = Graph::<f64>::new();
                let a = g.leaf(&t64(&[3, 4], v));
                let b = g.constant_from(vec![4, 2], b1.clone())?;
                let z = g.matmul(a, b)?;
                let loss = weighted_sum(&mut g, z, &w1)?;
                Ok((g, a, loss))
            })?,
        ));
        let (a1, w2) = (a0.clone(), w.clone());
        out.push((
            "matmul wrt right",
            check(&b0, move |v| {
                let mut g = Graph::<f64>::new();
                let a = g.constant_from(vec![3, 4], a1.clone())?;
                let b = g.leaf(&t64(&[4, 2], v));
                let z = g.matmul(a, b)?;
                let loss = weighted_sum(&mut g, z, &w2)?;
                Ok((g, b, loss))
            })?,
        ));
    }

    // bmm: [2,3,4] x [2,4,2]
    {
        let a0 = rand_vec(&mut rng, 24);
        let b0 = rand_vec(&mut rng, 16);
        let w = rand_vec(&mut rng, 12);
        let (b1, w1) = (b0.clone(), w.clone());
        out.push((
            "bmm wrt left",
            check(&a0, move |v| {
                let mut g = Graph::<f64>::new();
                let a = g.leaf(&t64(&[2, 3, 4], v));
                let b = g.constant_from(vec![2, 4, 2], b1.clone())?;
                let z = g.bmm(a, b)?;
                let loss = weighted_sum(&mut g, z, &w1)?;
                Ok((g, a, loss))
            })?,
        ));
        let (a1, w2) = (a0.clone(), w.clone());
        out.push((
            "bmm wrt right",
            check(&b0, move |v| {
                let mut g = Graph::<f64>::new();
                let a = g.constant_from(vec![2, 3, 4], a1.clone())?;
                let b = g.leaf(&t64(&[2, 4, 2], v));
                let z = g.bmm(a, b)?;
                let loss = weighted_sum(&mut g, z, &w2)?;
                Ok((g, b, loss))
            })?,
        ));
    }

    // transpose_last: [2,3,4] -> [2,4,3]
    {
        let x0 = rand_vec(&mut rng, 24);
        let w = rand_vec(&mut rng, 24);
        out.push((
            "transpose_last",
            check(&x0, move |v| {
                let mut g = Graph::<f64>::new();
                let x = g.leaf(&t64(&[2, 3, 4], v));
                let z = g.transpose_last(x)?;
                let loss = weighted_sum(&mut g, z, &w)?;
                Ok((g, x, loss))
            })?,
        ));
    }

    // swap12: [2,3,4,2] -> [2,4,3,2]
    {
        let x0 = rand_vec(&mut rng, 48);
        let w = rand_vec(&mut rng, 48);
        out.push((
            "swap12",
            check(&x0, move |v| {
                let mut g = Graph::<f64>::new();
                let x = g.leaf(&t64(&[2, 3, 4, 2], v));
                let z = g.swap12(x)?;
                let loss = weighted_sum(&mut g, z, &w)?;
                Ok((g, x, loss))
            })?,
        ));
    }

    // softmax over the last axis, weighted so the row-sum constraint does
    // not cancel the gradient
    {
        let x0 = rand_vec(&mut rng, 24);
        let w = rand_vec(&mut rng, 24);
        out.push((
            "softmax",
            check(&x0, move |v| {
                let mut g = Graph::<f64>::new();
                let x = g.leaf(&t64(&[2, 3, 4], v));
                let z = g.softmax(x, 2)?;
                let loss = weighted_sum(&mut g, z, &w)?;
                Ok((g, x, loss))
            })?,
        ));
    }

    // layer_norm with respect to input, gain, and shift
    {
        let x0 = rand_vec(&mut rng, 12);
        let gamma0 = rand_vec(&mut rng, 4);
        let beta0 = rand_vec(&mut rng, 4);
        let w = rand_vec(&mut rng, 12);
        let (g1, b1, w1) = (gamma0.clone(), beta0.clone(), w.clone());
        out.push((
            "layer_norm wrt input",
            check(&x0, move |v| {
                let mut g = Graph::<f64>::new();
                let x = g.leaf(&t64(&[3, 4], v));
                let gamma = g.constant_from(vec![4], g1.clone())?;
                let beta = g.constant_from(vec![4], b1.clone())?;
                let z = g.layer_norm(x, gamma, beta, 1e-5)?;
                let loss = weighted_sum(&mut g, z, &w1)?;
                Ok((g, x, loss))
            })?,
        ));
        let (x1, b2, w2) = (x0.clone(), beta0.clone(), w.clone());
        out.push((
            "layer_norm wrt gain",
            check(&gamma0, move |v| {
                let mut g = Graph::<f64>::new();
                let x = g.constant_from(vec![3, 4], x1.clone())?;
                let gamma = g.leaf(&t64(&[4], v));
                let beta = g.constant_from(vec![4], b2.clone())?;
                let z = g.layer_norm(x, gamma, beta, 1e-5)?;
                let loss = weighted_sum(&mut g, z, &w2)?;
                Ok((g, gamma, loss))
            })?,
        ));
        let (x2, g2, w3) = (x0.clone(), gamma0.clone(), w.clone());
        out.push((
            "layer_norm wrt shift",
            check(&beta0, move |v| {
                let mut g = Graph::<f64>::new();
                let x = g.constant_from(vec![3, 4], x2.clone())?;
                let gamma = g.constant_from(vec![4], g2.clone())?;
                let beta = g.leaf(&t64(&[4], v));
                let z = g.layer_norm(x, gamma, beta, 1e-5)?;
                let loss = weighted_sum(&mut g, z, &w3)?;
                Ok((g, beta, loss))
            })?,
        ));
    }

    // cross_entropy: mean NLL over a batch of logit rows
    {
        let x0 = rand_vec(&mut rng, 20);
        out.push((
            "cross_entropy",
            check(&x0, move |v| {
                let mut g = Graph::<f64>::new();
                let x = g.leaf(&t64(&[4, 5], v));
                let loss = g.cross_entropy(x, &[0, 3, 2, 4])?;
                Ok((g, x, loss))
            })?,
        ));
    }

    // dropout in training mode; the mask is re-seeded identically on every
    // rebuild, so the finite differences see a fixed linear map
    {
        let x0 = rand_vec(&mut rng, 16);
        let w = rand_vec(&mut rng, 16);
        out.push((
            "dropout",
            check(&x0, move |v| {
                let mut g = Graph::<f64>::new();
                let x = g.leaf(&t64(&[4, 4], v));
                let mut drop_rng = Rng::new(1234).split("gradcheck/dropout");
                let z = g.dropout(x, 0.4, true, &mut drop_rng)?;
                let loss = weighted_sum(&mut g, z, &w)?;
                Ok((g, x, loss))
            })?,
        ));
    }

    // gather_rows with a repeated id, so gradients accumulate into one row
    {
        let x0 = rand_vec(&mut rng, 18);
        let w = rand_vec(&mut rng, 12);
        out.push((
            "gather_rows",
            check(&x0, move |v| {
                let mut g = Graph::<f64>::new();
                let table = g.leaf(&t64(&[6, 3], v));
                let z = g.gather_rows(table, &[0, 2, 2, 5])?;
                let loss = weighted_sum(&mut g, z, &w)?;
                Ok((g, table, loss))
            })?,
        ));
    }

    // add_key_bias on [batch*heads, seq, seq] attention scores
    {
        let x0 = rand_vec(&mut rng, 36);
        let bias = vec![0.0, -0.5, 0.25, -1.0, 0.0, 0.75];
        let w = rand_vec(&mut rng, 36);
        out.push((
            "add_key_bias",
            check(&x0, move |v| {
                let mut g = Graph::<f64>::new();
                let x = g.leaf(&t64(&[4, 3, 3], v));
                let z = g.add_key_bias(x, bias.clone(), 2)?;
                let loss = weighted_sum(&mut g, z, &w)?;
                Ok((g, x, loss))
            })?,
        ));
    }

    // masked_mean pooling with some zero weights
    {
        let x0 = rand_vec(&mut rng, 24);
        let weights = vec![0.5, 0.5, 0.0, 1.0, 0.0, 0.0];
        let w = rand_vec(&mut rng, 8);
        out.push((
            "masked_mean",
            check(&x0, move |v| {
                let mut g = Graph::<f64>::new();
                let x = g.leaf(&t64(&[2, 3, 4], v));
                let z = g.masked_mean(x, weights.clone())?;
                let loss = weighted_sum(&mut g, z, &w)?;
                Ok((g, x, loss))
            })?,
        ));
    }

    // sum_all through a nonlinearity (x * x) so the gradient is non-constant
    {
        let x0 = rand_vec(&mut rng, 9);
        out.push((
            "sum_all",
            check(&x0, move |v| {
                let mut g = Graph::<f64>::new();
                let x = g.leaf(&t64(&[9], v));
                let sq = g.mul(x, x)?;
                let loss = g.sum_all(sq);
                Ok((g, x, loss))
            })?,
        ));
    }

    Ok(out)
}

/// Toy-scale classifier config for the end-to-end check: d_model 8, one
/// layer, two heads, dropout off so the loss is a deterministic function of
/// the parameters.
fn toy_config() -> ModelConfig {
    let mut config = ModelConfig::new(12, 2, 4);
    config.d_model = 8;
    config.ffn_dim = 16;
    config.n_layers = 1;
    config.n_heads = 2;
    config.dropout = 0.0;
    config.max_len = 8;
    config.seed = 5;
    config
}

/// Max relative error between analytic and central-difference gradients over
/// every parameter element of the toy model, using the combined two-head
/// loss on a ragged (padded) batch.
pub fn full_model_check() -> Result<f64> {
    let config = toy_config();
    let mut model = TransformerClassifier::<f64>::init(&config)?;
    let seqs = vec![vec![4, 5, 6], vec![7, 8], vec![9, 10, 11, 4]];
    let batch = Batch::from_sequences(&seqs, config.max_len)?;
    let pos_targets = [0usize, 1, 0];
    let contlex_targets = [0usize, 2, 3];

    let loss_of = |model: &TransformerClassifier<f64>| -> Result<f64> {
        let mut g = Graph::<f64>::new();
        let mut rng = Rng::new(99);
        let fwd = model.forward(&mut g, &batch, false, &mut rng)?;
        let (total, _, _) = combined_loss(
            &mut g,
            fwd.pos_logits,
            fwd.contlex_logits,
            &pos_targets,
            &contlex_targets,
            (1.0, 0.7),
        )?;
        Ok(g.scalar_value(total))
    };

    // Analytic gradients for every parameter, indexed by ParamId.
    let n_params = model.params.len();
    let mut analytic: Vec<Vec<f64>> = vec![Vec::new(); n_params];
    {
        let mut g = Graph::<f64>::new();
        let mut rng = Rng::new(99);
        let fwd = model.forward(&mut g, &batch, false, &mut rng)?;
        let (total, _, _) = combined_loss(
            &mut g,
            fwd.pos_logits,
            fwd.contlex_logits,
            &pos_targets,
            &contlex_targets,
            (1.0, 0.7),
        )?;
        let grads = g.backward(total)?;
        for (id, grad) in grads.param_grads() {
            analytic[id.0] = grad.to_vec();
        }
    }

    let ids: Vec<morphclass::numerics::ParamId> =
        model.params.iter().map(|(id, _, _)| id).collect();
    let mut max_err: f64 = 0.0;
    for id in ids {
        let n = model.params.get(id).numel();
        for j in 0..n {
            let orig = model.params.get(id).data()[j];
            let h = 1e-5 * orig.abs().max(1.0);
            model.params.get_mut(id).data_mut()[j] = orig + h;
            let plus = loss_of(&model)?;
            model.params.get_mut(id).data_mut()[j] = orig - h;
            let minus = loss_of(&model)?;
            model.params.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = if analytic[id.0].is_empty() { 0.0 } else { analytic[id.0][j] };
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}
