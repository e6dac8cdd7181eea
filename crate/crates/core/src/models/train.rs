use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::arch::ArchitectureSpec;
use super::network::{argmax_label, build, Classifier};
use crate::dataio::{population_std, LabeledDataset, Target};
use crate::metrics::{bca, ScoreReport};
use crate::{par, seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Epoch (0-based) from which the learning rate is multiplied by `decay_factor`.
    pub decay_epoch: usize,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub target: Target,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.01,
            decay_epoch: 50,
            decay_factor: 0.1,
            batch_size: 128,
            seed: 0,
            target: Target::Uid,
        }
    }
}

impl TrainConfig {
    pub fn for_target(target: Target, seed: u64) -> Self {
        Self {
            target,
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        Ok(())
    }

    pub(crate) fn lr_at(&self, epoch: usize) -> f64 {
        if epoch >= self.decay_epoch {
            self.learning_rate * self.decay_factor
        } else {
            self.learning_rate
        }
    }
}

/// Rewrites a training mini-batch in place before the gradient step
/// (adversarial examples, augmentation). `indices` are dataset trial indices.
pub trait BatchHook: Sync {
    fn prepare(
        &self,
        model: &Classifier,
        batch: &mut [Vec<f64>],
        labels: &[u32],
        indices: &[usize],
        seed: u64,
    ) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedClassifier {
    pub classifier: Classifier,
    pub target: Target,
    /// Mean training loss per epoch.
    pub history: Vec<f64>,
}

pub fn trials_f64(dataset: &LabeledDataset, indices: &[usize]) -> Vec<Vec<f64>> {
    indices
        .iter()
        .map(|&i| dataset.trial(i).iter().map(|&v| f64::from(v)).collect())
        .collect()
}

fn check_geometry(spec: &ArchitectureSpec, dataset: &LabeledDataset, target: Target) -> Result<()> {
    if spec.n_channels != dataset.n_channels() || spec.n_samples != dataset.n_samples() {
        return Err(Error::Geometry {
            channels: dataset.n_channels(),
            samples: dataset.n_samples(),
            message: format!("model expects {}x{}", spec.n_channels, spec.n_samples),
        });
    }
    if spec.n_outputs != dataset.n_labels(target) {
        return Err(Error::invalid(
            "n_outputs",
            format!(
                "model has {} outputs but the {} label space has {}",
                spec.n_outputs,
                target.as_str(),
                dataset.n_labels(target)
            ),
        ));
    }
    Ok(())
}

/// Supervised training with Adam, step-decayed learning rate and dropout.
pub fn train(
    spec: &ArchitectureSpec,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<TrainedClassifier> {
    train_with_hooks(spec, dataset, cfg, &[])
}

pub fn train_with_hooks(
    spec: &ArchitectureSpec,
    dataset: &LabeledDataset,
    cfg: &TrainConfig,
    hooks: &[&dyn BatchHook],
) -> Result<TrainedClassifier> {
    cfg.validate()?;
    check_geometry(spec, dataset, cfg.target)?;
    let mut model = build(spec, seed::derive(cfg.seed, "init", 0))?;
    model.set_input_scale(population_std(dataset.trials().iter().copied()));
    let labels = dataset.labels(cfg.target);
    let n = dataset.n_trials();
    let mut opt = Adam::new(model.n_params());
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng(seed::derive(
            cfg.seed,
            "shuffle",
            epoch as u64,
        )));
        let lr = cfg.lr_at(epoch);
        let mut epoch_loss = 0.0;
        for batch_idx in order.chunks(cfg.batch_size) {
            let mut xs = trials_f64(dataset, batch_idx);
            let ys: Vec<u32> = batch_idx.iter().map(|&i| labels[i]).collect();
            for (h, hook) in hooks.iter().enumerate() {
                let s = seed::derive(cfg.seed, "hook", (step as u64) << 8 | h as u64);
                hook.prepare(&model, &mut xs, &ys, batch_idx, s)?;
            }
            let step_seed = seed::derive(cfg.seed, "dropout", step as u64);
            let grads = par::map_range(xs.len(), |i| {
                let mut rng = seed::rng(seed::derive(step_seed, "sample", i as u64));
                model.sample_grad(&xs[i], ys[i], Some(&mut rng), true)
            });
            let b = xs.len() as f64;
            let mut total = vec![0.0; model.n_params()];
            let mut loss = 0.0;
            for g in &grads {
                loss += g.loss;
                for (t, v) in total
                    .iter_mut()
                    .zip(g.params.as_ref().expect("param grads requested"))
                {
                    *t += v;
                }
            }
            if !loss.is_finite() || total.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    stage: "train",
                    epoch,
                    step,
                });
            }
            total.iter_mut().for_each(|v| *v /= b);
            opt.step(model.params_mut(), &total, lr);
            epoch_loss += loss;
            step += 1;
        }
        history.push(epoch_loss / n as f64);
    }
    Ok(TrainedClassifier {
        classifier: model,
        target: cfg.target,
        history,
    })
}

/// Predicted 1-based labels for flat row-major trials.
pub fn predict(classifier: &Classifier, trials: &[f32]) -> Result<Vec<u32>> {
    let len = classifier.input_len();
    if !trials.len().is_multiple_of(len) {
        return Err(Error::Geometry {
            channels: classifier.spec().n_channels,
            samples: classifier.spec().n_samples,
            message: format!("{} values is not a whole number of trials", trials.len()),
        });
    }
    let rows: Vec<&[f32]> = trials.chunks_exact(len).collect();
    Ok(par::map_slice(&rows, |row| {
        let x: Vec<f64> = row.iter().map(|&v| f64::from(v)).collect();
        argmax_label(&classifier.logits(&x))
    }))
}

pub fn predict_dataset(classifier: &Classifier, dataset: &LabeledDataset) -> Result<Vec<u32>> {
    classifier.check_input(dataset.trial_len())?;
    predict(classifier, dataset.trials())
}

/// Balanced accuracy of `model` on `dataset` for its training target.
pub fn evaluate(model: &TrainedClassifier, dataset: &LabeledDataset) -> Result<ScoreReport> {
    let pred = predict_dataset(&model.classifier, dataset)?;
    bca(&pred, dataset.labels(model.target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{DatasetParts, SynthConfig};
    use crate::models::Family;

    /// 20 trials, 2 classes, separable by the sign of a 6 Hz component on channel 0.
    fn separable() -> LabeledDataset {
        let (c, t) = (2usize, 64usize);
        let mut trials = Vec::new();
        let mut task = Vec::new();
        for i in 0..20 {
            let k = i % 2;
            for ch in 0..c {
                for s in 0..t {
                    let base = ((i * 31 + ch * 7 + s * 13) % 17) as f32 / 17.0 - 0.5;
                    let sig = if ch == 0 {
                        (s as f32 * 0.6).sin() * if k == 0 { 2.0 } else { -2.0 }
                    } else {
                        0.0
                    };
                    trials.push(base + sig);
                }
            }
            task.push(k as u32 + 1);
        }
        LabeledDataset::new(DatasetParts {
            trials,
            n_channels: c,
            n_samples: t,
            task_labels: task,
            user_labels: (0..20).map(|i| (i / 10) as u32 + 1).collect(),
            session_ids: vec![1; 20],
            sampling_rate: 64.0,
            class_names: vec!["a".into(), "b".into()],
            user_names: vec!["u1".into(), "u2".into()],
        })
        .unwrap()
    }

    #[test]
    fn overfits_tiny_separable_set() {
        let d = separable();
        let spec = ArchitectureSpec::new(Family::Eegnet, 2, 64, 2);
        let cfg = TrainConfig::for_target(Target::Task, 3);
        let m = train(&spec, &d, &cfg).unwrap();
        assert_eq!(evaluate(&m, &d).unwrap().bca, 1.0);
        assert!(m.history.last().unwrap() < &m.history[0]);
    }

    #[test]
    fn same_seed_same_parameters() {
        let d = separable();
        let spec = ArchitectureSpec::new(Family::Deepcnn, 2, 64, 2);
        let spec = ArchitectureSpec {
            hyper: crate::models::Hyper {
                temporal_kernel: Some(3),
                ..spec.hyper.clone()
            },
            ..spec
        };
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::for_target(Target::Task, 9)
        };
        let a = train(&spec, &d, &cfg).unwrap();
        let b = train(&spec, &d, &cfg).unwrap();
        assert_eq!(a.classifier.params(), b.classifier.params());
    }

    #[test]
    fn predict_is_partition_invariant() {
        let d = synth_small();
        let spec = ArchitectureSpec::new(
            Family::Shallowcnn,
            d.n_channels(),
            d.n_samples(),
            d.n_users(),
        );
        let net = build(&spec, 1).unwrap();
        let all = predict(&net, d.trials()).unwrap();
        let one_by_one: Vec<u32> = (0..d.n_trials())
            .map(|i| predict(&net, d.trial(i)).unwrap()[0])
            .collect();
        assert_eq!(all, one_by_one);
        assert!(all.iter().all(|&l| (1..=d.n_users() as u32).contains(&l)));
        assert!(predict(&net, &d.trials()[..5]).is_err());
    }

    #[test]
    fn mismatched_label_space_is_rejected() {
        let d = synth_small();
        let spec = ArchitectureSpec::new(Family::Eegnet, d.n_channels(), d.n_samples(), 3);
        assert!(train(&spec, &d, &TrainConfig::for_target(Target::Task, 0)).is_err());
        let spec = ArchitectureSpec::new(Family::Eegnet, d.n_channels() + 1, d.n_samples(), 2);
        assert!(train(&spec, &d, &TrainConfig::for_target(Target::Task, 0)).is_err());
    }

    fn synth_small() -> LabeledDataset {
        crate::dataio::synth_generate(&SynthConfig::preset("tiny").unwrap()).unwrap()
    }
}
