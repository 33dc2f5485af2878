use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// Mean softmax cross-entropy over the batch and its gradient with respect
/// to the logits, `(softmax − onehot) / batch`.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    let (per_sample, grad) = per_sample_cross_entropy(logits, labels)?;
    let n = logits.rows() as f64;
    let loss = per_sample.iter().sum::<f64>() / n;
    Ok((loss, grad.scale(1.0 / n)?))
}

/// Per-row losses and the un-averaged gradient `softmax − onehot`, whose row
/// `n` is `∂E_n/∂logits_n` for the single-sample loss `E_n`.
pub fn per_sample_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(Vec<f64>, Matrix)> {
    let (n, c) = logits.shape();
    if labels.len() != n {
        return Err(Error::Consistency(format!(
            "{} labels for {n} logit rows",
            labels.len()
        )));
    }
    if n == 0 {
        return Err(Error::domain("cross-entropy of an empty batch"));
    }
    let mut losses = Vec::with_capacity(n);
    let mut grad = Vec::with_capacity(n * c);
    for (r, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(Error::domain(format!(
                "label {label} out of range for {c} classes"
            )));
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        losses.push(log_z - row[label]);
        for (j, &z) in row.iter().enumerate() {
            let p = (z - log_z).exp();
            grad.push(if j == label { p - 1.0 } else { p });
        }
    }
    Ok((losses, Matrix::new(n, c, grad)?))
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
