use crate::{Error, Result};

/// Softmax cross-entropy for one sample with a 1-based label.
/// Returns the loss and its gradient w.r.t. the logits.
pub(crate) fn softmax_ce(logits: &[f64], label: u32) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let t = label as usize - 1;
    let loss = z.ln() - (logits[t] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / z).collect();
    grad[t] -= 1.0;
    (loss, grad)
}

/// Mean cross-entropy of row-major `[B, K]` logits against 1-based labels.
pub fn ce_loss(logits: &[f64], n_classes: usize, labels: &[u32]) -> Result<f64> {
    Ok(ce_loss_grad(logits, n_classes, labels)?.0)
}

/// Mean cross-entropy and its gradient w.r.t. the logits.
pub fn ce_loss_grad(logits: &[f64], n_classes: usize, labels: &[u32]) -> Result<(f64, Vec<f64>)> {
    if n_classes == 0 || logits.len() != labels.len() * n_classes {
        return Err(Error::Shape {
            field: "logits".into(),
            expected: labels.len() * n_classes,
            found: logits.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::invalid("labels", "empty batch"));
    }
    if let Some(&l) = labels.iter().find(|&&l| l == 0 || l as usize > n_classes) {
        return Err(Error::invalid(
            "labels",
            format!("label {l} outside 1..={n_classes}"),
        ));
    }
    let b = labels.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &l) in logits.chunks_exact(n_classes).zip(labels) {
        let (loss, g) = softmax_ce(row, l);
        total += loss;
        grad.extend(g.into_iter().map(|v| v / b));
    }
    Ok((total / b, grad))
}
