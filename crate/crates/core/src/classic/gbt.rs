use rand::Rng;
use serde::{Deserialize, Serialize};

use super::lda::check_rows;
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtConfig {
    /// Boosting rounds; each round adds one tree per class.
    pub n_trees: usize,
    pub depth: usize,
    pub learning_rate: f64,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    /// Minimum summed hessian per child.
    pub min_child_weight: f64,
    /// Candidate thresholds per feature (quantiles of the training values).
    pub n_bins: usize,
    /// Row fraction drawn per round.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            depth: 3,
            learning_rate: 0.1,
            lambda: 1.0,
            min_child_weight: 1e-3,
            n_bins: 64,
            subsample: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn eval(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

/// Softmax gradient-boosted regression trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub classes: Vec<u32>,
    n_features: usize,
    base: Vec<f64>,
    learning_rate: f64,
    /// `rounds[r][k]`: tree for class `k` in round `r`.
    rounds: Vec<Vec<Tree>>,
}

impl GbtModel {
    pub fn n_rounds(&self) -> usize {
        self.rounds.len()
    }

    fn raw_scores(&self, x: &[f64]) -> Vec<f64> {
        let mut s = self.base.clone();
        for round in &self.rounds {
            for (v, tree) in s.iter_mut().zip(round) {
                *v += self.learning_rate * tree.eval(x);
            }
        }
        s
    }
}

struct Grower<'a> {
    cols: &'a [Vec<f64>],
    cuts: &'a [Vec<f64>],
    cfg: &'a GbtConfig,
}

impl Grower<'_> {
    fn leaf_value(&self, g: f64, h: f64) -> f64 {
        -g / (h + self.cfg.lambda)
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.cfg.lambda)
    }

    fn grow(
        &self,
        rows: &[usize],
        grad: &[f64],
        hess: &[f64],
        depth: usize,
        nodes: &mut Vec<Node>,
    ) -> usize {
        let g: f64 = rows.iter().map(|&r| grad[r]).sum();
        let h: f64 = rows.iter().map(|&r| hess[r]).sum();
        let id = nodes.len();
        nodes.push(Node::Leaf(self.leaf_value(g, h)));
        if depth == self.cfg.depth || rows.len() < 2 {
            return id;
        }
        let parent = self.score(g, h);
        let mut best: Option<(f64, usize, f64)> = None;
        for (f, cuts) in self.cuts.iter().enumerate() {
            if cuts.is_empty() {
                continue;
            }
            let col = &self.cols[f];
            let mut bg = vec![0.0; cuts.len() + 1];
            let mut bh = vec![0.0; cuts.len() + 1];
            for &r in rows {
                let b = cuts.partition_point(|&c| c < col[r]);
                bg[b] += grad[r];
                bh[b] += hess[r];
            }
            let (mut gl, mut hl) = (0.0, 0.0);
            for (b, &cut) in cuts.iter().enumerate() {
                gl += bg[b];
                hl += bh[b];
                let (gr, hr) = (g - gl, h - hl);
                if hl < self.cfg.min_child_weight || hr < self.cfg.min_child_weight {
                    continue;
                }
                let gain = self.score(gl, hl) + self.score(gr, hr) - parent;
                if gain > 1e-12 && best.is_none_or(|(bgain, _, _)| gain > bgain) {
                    best = Some((gain, f, cut));
                }
            }
        }
        let Some((_, feature, threshold)) = best else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.cols[feature][r] <= threshold);
        let left = self.grow(&l, grad, hess, depth + 1, nodes);
        let right = self.grow(&r, grad, hess, depth + 1, nodes);
        nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

/// Quantile thresholds: midpoints between distinct sorted values, thinned
/// to at most `n_bins - 1` cuts.
fn candidate_cuts(col: &[f64], n_bins: usize) -> Vec<f64> {
    let mut v = col.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    let mids: Vec<f64> = v.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let max_cuts = n_bins.saturating_sub(1).max(1);
    if mids.len() <= max_cuts {
        return mids;
    }
    let mut cuts: Vec<f64> = (1..=max_cuts)
        .map(|i| mids[i * mids.len() / (max_cuts + 1)])
        .collect();
    cuts.dedup();
    cuts
}

/// Fit the ensemble. Rows are put in a canonical order first, so the model
/// does not depend on the order of the training samples.
pub fn gbt_fit(features: &[Vec<f64>], labels: &[u32], cfg: &GbtConfig) -> Result<GbtModel> {
    let d = check_rows(features, labels)?;
    if cfg.depth == 0 || cfg.n_bins < 2 {
        return Err(Error::invalid(
            "gbt",
            "depth must be at least 1 and n_bins at least 2",
        ));
    }
    if !(cfg.learning_rate > 0.0
        && cfg.lambda >= 0.0
        && cfg.subsample > 0.0
        && cfg.subsample <= 1.0)
    {
        return Err(Error::invalid(
            "gbt",
            "need learning_rate > 0, lambda >= 0, 0 < subsample <= 1",
        ));
    }
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::invalid(
            "labels",
            "gradient boosting needs at least two classes",
        ));
    }
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.sort_by(|&a, &b| {
        features[a]
            .iter()
            .zip(&features[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(labels[a].cmp(&labels[b]))
    });
    let n = order.len();
    let k = classes.len();
    let y: Vec<usize> = order
        .iter()
        .map(|&i| classes.binary_search(&labels[i]).unwrap())
        .collect();
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|f| order.iter().map(|&i| features[i][f]).collect())
        .collect();
    let cuts: Vec<Vec<f64>> = cols.iter().map(|c| candidate_cuts(c, cfg.n_bins)).collect();

    let mut counts = vec![0usize; k];
    y.iter().for_each(|&c| counts[c] += 1);
    let base: Vec<f64> = counts.iter().map(|&c| (c as f64 / n as f64).ln()).collect();
    let mut raw: Vec<Vec<f64>> = vec![base.clone(); n];
    let grower = Grower {
        cols: &cols,
        cuts: &cuts,
        cfg,
    };
    let mut rounds = Vec::with_capacity(cfg.n_trees);
    let mut rng = seed::rng(seed::derive(cfg.seed, "gbt", 0));
    for _ in 0..cfg.n_trees {
        let rows: Vec<usize> = if cfg.subsample < 1.0 {
            (0..n)
                .filter(|_| rng.random::<f64>() < cfg.subsample)
                .collect()
        } else {
            (0..n).collect()
        };
        let probs: Vec<Vec<f64>> = raw.iter().map(|s| softmax(s)).collect();
        let mut round = Vec::with_capacity(k);
        for c in 0..k {
            let grad: Vec<f64> = probs
                .iter()
                .zip(&y)
                .map(|(p, &yi)| p[c] - f64::from(u8::from(yi == c)))
                .collect();
            let hess: Vec<f64> = probs
                .iter()
                .map(|p| (p[c] * (1.0 - p[c])).max(1e-12))
                .collect();
            let mut nodes = Vec::new();
            grower.grow(&rows, &grad, &hess, 0, &mut nodes);
            round.push(Tree { nodes });
        }
        for (i, s) in raw.iter_mut().enumerate() {
            let x: Vec<f64> = cols.iter().map(|c| c[i]).collect();
            for (v, tree) in s.iter_mut().zip(&round) {
                *v += cfg.learning_rate * tree.eval(&x);
            }
        }
        rounds.push(round);
    }
    Ok(GbtModel {
        classes,
        n_features: d,
        base,
        learning_rate: cfg.learning_rate,
        rounds,
    })
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Highest-scoring class; ties go to the lowest label.
pub fn gbt_predict(model: &GbtModel, features: &[Vec<f64>]) -> Result<Vec<u32>> {
    features
        .iter()
        .map(|f| {
            if f.len() != model.n_features {
                return Err(Error::Shape {
                    field: "features".into(),
                    expected: model.n_features,
                    found: f.len(),
                });
            }
            let s = model.raw_scores(f);
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

#[cfg(test)]
mod tests {
    use super::*;

    fn xor(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u32>) {
        let mut rng = crate::seed::rng(seed);
        let mut f = Vec::new();
        let mut l = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            f.push(vec![a, b]);
            l.push(if (a > 0.0) ^ (b > 0.0) { 2 } else { 1 });
        }
        (f, l)
    }

    fn accuracy(p: &[u32], l: &[u32]) -> f64 {
        p.iter().zip(l).filter(|(a, b)| a == b).count() as f64 / l.len() as f64
    }

    #[test]
    fn learns_xor() {
        let (f, l) = xor(400, 1);
        let m = gbt_fit(&f, &l, &GbtConfig::default()).unwrap();
        assert!(accuracy(&gbt_predict(&m, &f).unwrap(), &l) >= 0.95);
    }

    #[test]
    fn empty_ensemble_predicts_majority() {
        let f = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0], vec![4.0]];
        let l = vec![2, 3, 2, 1, 2];
        let m = gbt_fit(
            &f,
            &l,
            &GbtConfig {
                n_trees: 0,
                ..GbtConfig::default()
            },
        )
        .unwrap();
        assert_eq!(gbt_predict(&m, &f).unwrap(), vec![2; 5]);
    }

    #[test]
    fn sample_order_does_not_matter() {
        let (f, l) = xor(120, 2);
        let cfg = GbtConfig {
            n_trees: 10,
            subsample: 0.7,
            seed: 3,
            ..GbtConfig::default()
        };
        let a = gbt_fit(&f, &l, &cfg).unwrap();
        let mut idx: Vec<usize> = (0..f.len()).rev().collect();
        idx.rotate_left(17);
        let fp: Vec<Vec<f64>> = idx.iter().map(|&i| f[i].clone()).collect();
        let lp: Vec<u32> = idx.iter().map(|&i| l[i]).collect();
        assert_eq!(gbt_fit(&fp, &lp, &cfg).unwrap(), a);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(gbt_fit(&[vec![0.0], vec![1.0]], &[1, 1], &GbtConfig::default()).is_err());
    }
}
