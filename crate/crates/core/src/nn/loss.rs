use ndarray::{Array2, Axis};

/// Row-wise softmax, shifted by the row maximum.
pub fn softmax_rows(logits: &Array2<f32>) -> Array2<f32> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

/// Mean categorical cross-entropy of logits against integer labels.
///
/// Returns the loss, the gradient w.r.t. the logits and the probabilities.
pub fn softmax_cross_entropy(logits: &Array2<f32>, labels: &[usize]) -> (f64, Array2<f32>, Array2<f32>) {
    let probs = softmax_rows(logits);
    let n = labels.len() as f64;
    let mut loss = 0.0f64;
    for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
        let max = row.fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        let lse = max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
        loss += lse - row[labels[i]] as f64;
    }
    let mut grad = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        grad[[i, y]] -= 1.0;
    }
    grad /= labels.len() as f32;
    (loss / n, grad, probs)
}

/// Mean cross-entropy from probabilities, clipped away from zero.
pub fn cross_entropy(probs: &Array2<f32>, labels: &[usize]) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -(probs[[i, y]].max(1e-7) as f64).ln())
        .sum();
    total / labels.len() as f64
}

pub fn argmax(row: ndarray::ArrayView1<'_, f32>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(probs: &Array2<f32>, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(probs.row(i)) == y)
        .count();
    hits as f64 / labels.len() as f64
}
