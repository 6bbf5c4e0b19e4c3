use ndarray::{Array2, Axis};

use crate::error::{NnError, Result};

/// Mean softmax cross-entropy over a batch of logits.
///
/// `loss = (1/B) * sum_b w[y_b] * -ln softmax(logits_b)[y_b]`, with
/// `w = 1` when no class weights are given. Returns the loss and its exact
/// gradient with respect to the logits.
pub fn softmax_cross_entropy(
    logits: &Array2<f64>,
    labels: &[usize],
    class_weights: Option<&[f64]>,
) -> Result<(f64, Array2<f64>)> {
    let (batch, classes) = logits.dim();
    if labels.len() != batch {
        return Err(NnError::Shape {
            context: "cross-entropy labels",
            expected: vec![batch],
            actual: vec![labels.len()],
        });
    }
    if let Some(w) = class_weights {
        if w.len() != classes {
            return Err(NnError::Shape {
                context: "cross-entropy class weights",
                expected: vec![classes],
                actual: vec![w.len()],
            });
        }
    }
    let mut grad = Array2::zeros((batch, classes));
    let mut total = 0.0;
    let scale = 1.0 / batch.max(1) as f64;
    for (b, (row, &label)) in logits.axis_iter(Axis(0)).zip(labels).enumerate() {
        if label >= classes {
            return Err(NnError::IndexOutOfRange { index: label, rows: classes });
        }
        let (arg, max) = row
            .iter()
            .cloned()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        let others: f64 = row
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != arg)
            .map(|(_, &v)| (v - max).exp())
            .sum();
        let w = class_weights.map_or(1.0, |w| w[label]);
        // grouped so a confident correct prediction keeps full precision
        total += w * ((max - row[label]) + others.ln_1p());
        let denom = 1.0 + others;
        for (c, &v) in row.iter().enumerate() {
            let p = (v - max).exp() / denom;
            let target = if c == label { 1.0 } else { 0.0 };
            grad[[b, c]] = w * scale * (p - target);
        }
    }
    Ok((total * scale, grad))
}

/// Inverse-frequency class weights `n / (k * n_c)`; absent classes get 0.
pub fn inverse_frequency_weights(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for &l in labels {
        if l < classes {
            counts[l] += 1;
        }
    }
    let n = labels.len() as f64;
    counts
        .iter()
        .map(|&c| if c == 0 { 0.0 } else { n / (classes as f64 * c as f64) })
        .collect()
}
