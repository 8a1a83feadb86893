//! Confusion-matrix metrics reference. Builds the full n x n matrix and
//! derives every statistic from it, independent of the library's
//! tally-per-label implementation.

use morphclass::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefLabel {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefReport {
    pub accuracy: f64,
    pub per_label: Vec<RefLabel>,
    /// (precision, recall, f1) weighted by support.
    pub weighted: (f64, f64, f64),
    /// (precision, recall, f1) averaged over labels with support > 0.
    pub macro_avg: (f64, f64, f64),
}

fn safe_div(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn reference(preds: &[usize], golds: &[usize], n_labels: usize) -> RefReport {
    assert_eq!(preds.len(), golds.len());
    let n = preds.len();
    let mut cm = vec![vec![0usize; n_labels]; n_labels];
    for (&p, &g) in preds.iter().zip(golds) {
        cm[g][p] += 1;
    }
    let trace: usize = (0..n_labels).map(|i| cm[i][i]).sum();
    let accuracy = safe_div(trace as f64, n as f64);

    let mut per_label = Vec::with_capacity(n_labels);
    for i in 0..n_labels {
        let tp = cm[i][i];
        let gold_total: usize = cm[i].iter().sum();
        let pred_total: usize = (0..n_labels).map(|g| cm[g][i]).sum();
        let precision = safe_div(tp as f64, pred_total as f64);
        let recall = safe_div(tp as f64, gold_total as f64);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_label.push(RefLabel { precision, recall, f1, support: gold_total });
    }

    let mut weighted = (0.0, 0.0, 0.0);
    for l in &per_label {
        let w = safe_div(l.support as f64, n as f64);
        weighted.0 += w * l.precision;
        weighted.1 += w * l.recall;
        weighted.2 += w * l.f1;
    }

    let present: Vec<&RefLabel> = per_label.iter().filter(|l| l.support > 0).collect();
    let k = present.len() as f64;
    let macro_avg = (
        safe_div(present.iter().map(|l| l.precision).sum(), k),
        safe_div(present.iter().map(|l| l.recall).sum(), k),
        safe_div(present.iter().map(|l| l.f1).sum(), k),
    );

    RefReport { accuracy, per_label, weighted, macro_avg }
}

/// Random prediction/gold set. Gold labels may leave some classes empty, and
/// predictions agree with gold about half the time so every confusion cell
/// gets visited across seeds.
pub fn random_case(seed: u64) -> (Vec<usize>, Vec<usize>, usize) {
    let mut rng = Rng::new(seed).split("metrics-oracle/case");
    let n_labels = 2 + (rng.next_u64() % 7) as usize;
    let n = 1 + (rng.next_u64() % 60) as usize;
    let golds: Vec<usize> =
        (0..n).map(|_| (rng.next_u64() % n_labels as u64) as usize).collect();
    let preds: Vec<usize> = golds
        .iter()
        .map(|&g| {
            if rng.next_u64() % 2 == 0 {
                g
            } else {
                (rng.next_u64() % n_labels as u64) as usize
            }
        })
        .collect();
    (preds, golds, n_labels)
}
