//! Finite-difference verification of analytic gradients.
//!
//! Runs in f64 so the central-difference truncation error dominates the
//! floating-point error. `check` rebuilds the forward pass twice per input
//! element with that element perturbed by ±h.

use super::graph::{Gradients, Graph, Var};
use crate::error::Result;

/// Largest relative error between analytic and numeric gradients, with the
/// denominator clamped to `1e-8` so near-zero gradients compare absolutely.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Central finite differences of `f` at `x` with per-element step
/// `h = 1e-5 * max(1, |x_i|)`.
pub fn numeric_grad(
    x: &[f64],
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-5 * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let plus = f(&probe)?;
        probe[i] = x[i] - h;
        let minus = f(&probe)?;
        probe[i] = x[i];
        grad[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Compare the analytic gradient of a scalar-valued graph function against
/// central differences. `build` maps a flat input to (graph, input var,
/// loss var); the same closure serves both the analytic and numeric sides.
///
/// Returns the maximum relative error over all input elements.
pub fn check(
    x: &[f64],
    mut build: impl FnMut(&[f64]) -> Result<(Graph<f64>, Var, Var)>,
) -> Result<f64> {
    let (graph, input, loss) = build(x)?;
    let grads: Gradients<f64> = graph.backward(loss)?;
    let analytic = grads.wrt(input).expect("input does not influence the loss").to_vec();
    let numeric = numeric_grad(x, |probe| {
        let (graph, _, loss) = build(probe)?;
        Ok(graph.scalar_value(loss))
    })?;
    Ok(max_rel_err(&analytic, &numeric))
}
