//! Raw / balanced classification accuracy and normalized cross-correlation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub bca: f64,
    pub rca: f64,
    /// Recall per class, ordered by ascending label of the classes present in `true`.
    pub per_class: Vec<(u32, f64)>,
    pub n_classes: usize,
    /// `1 / n_classes`.
    pub chance: f64,
}

fn check_lengths(pred: &[u32], truth: &[u32]) -> Result<()> {
    if truth.is_empty() {
        return Err(Error::invalid("labels", "empty input"));
    }
    if pred.len() != truth.len() {
        return Err(Error::Shape {
            field: "pred".into(),
            expected: truth.len(),
            found: pred.len(),
        });
    }
    Ok(())
}

/// Fraction of exact matches.
pub fn rca(pred: &[u32], truth: &[u32]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Balanced accuracy: per-class recall averaged over classes present in `truth`.
pub fn bca(pred: &[u32], truth: &[u32]) -> Result<ScoreReport> {
    check_lengths(pred, truth)?;
    let mut counts: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (p, t) in pred.iter().zip(truth) {
        let e = counts.entry(*t).or_default();
        e.1 += 1;
        if p == t {
            e.0 += 1;
        }
    }
    let per_class: Vec<(u32, f64)> = counts
        .iter()
        .map(|(&k, &(hit, n))| (k, hit as f64 / n as f64))
        .collect();
    let n_classes = per_class.len();
    let bca = exact_mean_recall(&counts)
        .unwrap_or_else(|| per_class.iter().map(|(_, r)| r).sum::<f64>() / n_classes as f64);
    Ok(ScoreReport {
        bca,
        rca: rca(pred, truth)?,
        per_class,
        n_classes,
        chance: 1.0 / n_classes as f64,
    })
}

/// Mean recall as one division of exact integers over the common
/// denominator `K * lcm(n_k)`, so the result is correctly rounded and equals
/// `rca` bit for bit when classes are balanced. `None` once the integers no
/// longer fit in an f64 mantissa.
fn exact_mean_recall(counts: &BTreeMap<u32, (usize, usize)>) -> Option<f64> {
    const EXACT: u128 = 1 << f64::MANTISSA_DIGITS;
    let gcd = |mut a: u128, mut b: u128| {
        while b != 0 {
            (a, b) = (b, a % b);
        }
        a
    };
    let mut lcm: u128 = 1;
    for &(_, n) in counts.values() {
        let n = n as u128;
        lcm = (lcm / gcd(lcm, n)).checked_mul(n).filter(|&l| l < EXACT)?;
    }
    let num: u128 = counts
        .values()
        .map(|&(hit, n)| hit as u128 * (lcm / n as u128))
        .sum();
    let den = lcm
        .checked_mul(counts.len() as u128)
        .filter(|&d| d < EXACT)?;
    Some(num as f64 / den as f64)
}

/// Normalized cross-correlation of two equally shaped arrays, flattened.
pub fn ncc(x: &[f32], y: &[f32]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            field: "x_prime".into(),
            expected: x.len(),
            found: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::invalid("x", "empty input"));
    }
    let n = x.len() as f64;
    let mx = x.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let my = y.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (a, b) = (f64::from(a) - mx, f64::from(b) - my);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("x", "zero-variance input"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_counted_cases() {
        assert_eq!(rca(&[1, 1, 2, 2], &[1, 2, 2, 2]).unwrap(), 0.75);
        assert_eq!(rca(&[1, 2], &[1, 2]).unwrap(), 1.0);
        assert_eq!(rca(&[2, 1], &[1, 2]).unwrap(), 0.0);
        let r = bca(&[1, 1, 2, 2], &[1, 2, 1, 2]).unwrap();
        assert_eq!(r.per_class, vec![(1, 0.5), (2, 0.5)]);
        assert_eq!(r.bca, 0.5);
        assert_eq!(r.chance, 0.5);
    }

    #[test]
    fn constant_predictor_on_two_classes() {
        let truth = [1, 1, 1, 2, 1, 2, 1];
        assert_eq!(bca(&[1; 7], &truth).unwrap().bca, 0.5);
    }

    #[test]
    fn errors() {
        assert!(rca(&[1], &[1, 2]).is_err());
        assert!(bca(&[], &[]).is_err());
        assert!(ncc(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ncc_identities() {
        let x: Vec<f32> = (0..50).map(|i| ((i * 7) % 11) as f32 - 3.0).collect();
        let neg: Vec<f32> = x.iter().map(|v| -v).collect();
        let aff: Vec<f32> = x.iter().map(|v| 2.0 * v + 7.0).collect();
        approx::assert_relative_eq!(ncc(&x, &x).unwrap(), 1.0, epsilon = 1e-12);
        approx::assert_relative_eq!(ncc(&x, &neg).unwrap(), -1.0, epsilon = 1e-12);
        approx::assert_relative_eq!(ncc(&x, &aff).unwrap(), 1.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn bca_invariant_to_consistent_relabeling(
            pairs in proptest::collection::vec((1u32..5, 1u32..5), 1..60),
            shift in 0u32..4,
        ) {
            let (pred, truth): (Vec<u32>, Vec<u32>) = pairs.into_iter().unzip();
            let perm = |l: u32| (l - 1 + shift) % 4 + 1;
            let a = bca(&pred, &truth).unwrap().bca;
            let pp: Vec<u32> = pred.iter().map(|&l| perm(l)).collect();
            let tt: Vec<u32> = truth.iter().map(|&l| perm(l)).collect();
            prop_assert!((a - bca(&pp, &tt).unwrap().bca).abs() < 1e-12);
        }

        #[test]
        fn constant_predictor_scores_one_over_k(truth in proptest::collection::vec(1u32..6, 1..80), c in 1u32..6) {
            let r = bca(&vec![c; truth.len()], &truth).unwrap();
            prop_assert!((r.bca - 1.0 / r.n_classes as f64).abs() < 1e-12 || !truth.contains(&c) && r.bca == 0.0);
        }

        #[test]
        fn ncc_positive_affine_invariance(
            x in proptest::collection::vec(-10.0f32..10.0, 4..40),
            a in 0.1f32..5.0,
            b in -5.0f32..5.0,
        ) {
            let y: Vec<f32> = x.iter().enumerate().map(|(i, v)| v + (i as f32 * 0.37).sin()).collect();
            if let Ok(base) = ncc(&x, &y) {
                let ya: Vec<f32> = y.iter().map(|v| a * v + b).collect();
                prop_assert!((ncc(&x, &ya).unwrap() - base).abs() < 1e-4);
            }
        }
    }
}
