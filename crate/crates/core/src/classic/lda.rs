use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Linear discriminant with a shared, ridge-regularised covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdaModel {
    /// Class labels in ascending order.
    pub classes: Vec<u32>,
    /// Per class: `Σ⁻¹ μ_k`.
    pub weights: Vec<Vec<f64>>,
    /// Per class: `-½ μ_kᵀ Σ⁻¹ μ_k + ln π_k`.
    pub offsets: Vec<f64>,
}

pub(crate) fn check_rows(features: &[Vec<f64>], labels: &[u32]) -> Result<usize> {
    if features.len() != labels.len() {
        return Err(Error::Shape {
            field: "labels".into(),
            expected: features.len(),
            found: labels.len(),
        });
    }
    let d = features.first().map_or(0, Vec::len);
    if let Some(bad) = features.iter().find(|f| f.len() != d) {
        return Err(Error::Shape {
            field: "features".into(),
            expected: d,
            found: bad.len(),
        });
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("features", "contain non-finite values"));
    }
    Ok(d)
}

/// Fit class means and the pooled within-class covariance
/// `S + ridge · (tr(S)/d) · I`. Scaling the ridge by the mean variance keeps
/// decisions invariant to a common rescaling of the features; a zero-trace
/// covariance falls back to an absolute `ridge · I`.
pub fn lda_fit(features: &[Vec<f64>], labels: &[u32], ridge: f64) -> Result<LdaModel> {
    let d = check_rows(features, labels)?;
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::invalid("ridge", "must be finite and non-negative"));
    }
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let k = classes.len();
    if k < 2 {
        return Err(Error::invalid("labels", "need at least two classes"));
    }
    let n = features.len();
    if n <= k {
        return Err(Error::invalid(
            "features",
            format!("{n} samples cannot fit {k} classes"),
        ));
    }
    let slot = |l: u32| classes.binary_search(&l).expect("label collected above");
    let mut means = vec![DVector::<f64>::zeros(d); k];
    let mut counts = vec![0usize; k];
    for (f, &l) in features.iter().zip(labels) {
        let c = slot(l);
        means[c] += DVector::from_column_slice(f);
        counts[c] += 1;
    }
    for (m, &c) in means.iter_mut().zip(&counts) {
        *m /= c as f64;
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for (f, &l) in features.iter().zip(labels) {
        let diff = DVector::from_column_slice(f) - &means[slot(l)];
        cov.syger(1.0, &diff, &diff, 1.0);
    }
    cov /= (n - k) as f64;
    let trace = cov.trace();
    let scale = if trace > 0.0 { trace / d as f64 } else { 1.0 };
    for i in 0..d {
        cov[(i, i)] += ridge * scale;
    }
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::invalid("ridge", "covariance is singular; use a positive ridge"))?;
    let mut weights = Vec::with_capacity(k);
    let mut offsets = Vec::with_capacity(k);
    for (m, &c) in means.iter().zip(&counts) {
        let w = chol.solve(m);
        offsets.push(-0.5 * m.dot(&w) + (c as f64 / n as f64).ln());
        weights.push(w.as_slice().to_vec());
    }
    Ok(LdaModel {
        classes,
        weights,
        offsets,
    })
}

impl LdaModel {
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.offsets)
            .map(|(w, b)| b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
            .collect()
    }
}

/// Highest-scoring class; ties go to the lowest label.
pub fn lda_predict(model: &LdaModel, features: &[Vec<f64>]) -> Result<Vec<u32>> {
    let d = model.weights[0].len();
    features
        .iter()
        .map(|f| {
            if f.len() != d {
                return Err(Error::Shape {
                    field: "features".into(),
                    expected: d,
                    found: f.len(),
                });
            }
            let s = model.scores(f);
            let mut best = 0;
            for (i, &v) in s.iter().enumerate().skip(1) {
                if v > s[best] {
                    best = i;
                }
            }
            Ok(model.classes[best])
        })
        .collect()
}
