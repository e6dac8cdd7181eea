use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{user_stds, LabeledDataset};
use crate::models::{
    train_with_hooks, ArchitectureSpec, BatchHook, Classifier, TrainConfig, TrainedClassifier,
};
use crate::{par, seed, Error, Result};

/// Projected gradient ascent on the cross-entropy inside an ℓ∞ ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgdConfig {
    /// Ball radius as a fraction of the trial's user standard deviation.
    pub epsilon: f64,
    pub n_steps: usize,
    /// Step as a fraction of user std; `None` means `epsilon / 4`.
    pub step_size: Option<f64>,
    pub random_start: bool,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            n_steps: 10,
            step_size: None,
            random_start: true,
        }
    }
}

impl PgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::invalid("epsilon", "must be finite and non-negative"));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps", "must be at least 1"));
        }
        if let Some(s) = self.step_size {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::invalid(
                    "step_size",
                    "must be finite and non-negative",
                ));
            }
        }
        Ok(())
    }

    fn step_fraction(&self) -> f64 {
        self.step_size.unwrap_or(self.epsilon / 4.0)
    }
}

/// Per-trial absolute radius `epsilon * std(user of trial)`.
pub fn trial_radii(dataset: &LabeledDataset, epsilon: f64) -> Result<Vec<f64>> {
    let stds = user_stds(dataset);
    Ok(dataset
        .user_labels()
        .iter()
        .map(|&u| epsilon * stds[u as usize - 1])
        .collect())
}

/// Attack `trials` (each of length `C * T`) against `classifier`.
///
/// `radii[i]` is the absolute ball radius of trial `i`; the step is
/// `radius * step_fraction / epsilon`. Inputs are not modified.
pub fn pgd_attack(
    classifier: &Classifier,
    trials: &[Vec<f64>],
    labels: &[u32],
    radii: &[f64],
    cfg: &PgdConfig,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    if labels.len() != trials.len() || radii.len() != trials.len() {
        return Err(Error::Shape {
            field: "labels".into(),
            expected: trials.len(),
            found: labels.len().min(radii.len()),
        });
    }
    let ratio = if cfg.epsilon > 0.0 {
        cfg.step_fraction() / cfg.epsilon
    } else {
        0.0
    };
    par::map_range(trials.len(), |i| {
        let x0 = &trials[i];
        classifier.check_input(x0.len())?;
        let r = radii[i];
        if r == 0.0 {
            return Ok(x0.clone());
        }
        let step = r * ratio;
        let mut x = x0.clone();
        if cfg.random_start {
            let mut rng = seed::rng(seed::derive(seed, "pgd-start", i as u64));
            x.iter_mut().for_each(|v| *v += rng.random_range(-r..=r));
        }
        for k in 0..cfg.n_steps {
            let g = classifier.sample_grad(&x, labels[i], None, false);
            if g.input.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence {
                    stage: "pgd",
                    epoch: 0,
                    step: k,
                });
            }
            for ((xv, &x0v), gv) in x.iter_mut().zip(x0).zip(&g.input) {
                let moved = *xv + step * gv.signum() * f64::from(u8::from(*gv != 0.0));
                *xv = moved.clamp(x0v - r, x0v + r);
            }
            debug_assert!(x
                .iter()
                .zip(x0)
                .all(|(a, b)| (a - b).abs() <= r + 4.0 * f64::EPSILON * (b.abs() + r)));
        }
        Ok(x)
    })
    .into_iter()
    .collect()
}

struct AdversarialHook<'a> {
    radii: &'a [f64],
    cfg: &'a PgdConfig,
}

impl BatchHook for AdversarialHook<'_> {
    fn prepare(
        &self,
        model: &Classifier,
        batch: &mut [Vec<f64>],
        labels: &[u32],
        indices: &[usize],
        seed: u64,
    ) -> Result<()> {
        let radii: Vec<f64> = indices.iter().map(|&i| self.radii[i]).collect();
        let attacked = pgd_attack(model, batch, labels, &radii, self.cfg, seed)?;
        batch.iter_mut().zip(attacked).for_each(|(b, a)| *b = a);
        Ok(())
    }
}

/// Train on mini-batches replaced by PGD examples against the current model.
pub fn adversarial_train(
    spec: &ArchitectureSpec,
    dataset: &LabeledDataset,
    pgd: &PgdConfig,
    cfg: &TrainConfig,
) -> Result<TrainedClassifier> {
    adversarial_train_with_hooks(spec, dataset, pgd, cfg, &[])
}

/// As [`adversarial_train`], running `before` (e.g. augmentation) on each
/// batch ahead of the attack.
pub fn adversarial_train_with_hooks(
    spec: &ArchitectureSpec,
    dataset: &LabeledDataset,
    pgd: &PgdConfig,
    cfg: &TrainConfig,
    before: &[&dyn BatchHook],
) -> Result<TrainedClassifier> {
    pgd.validate()?;
    if pgd.epsilon == 0.0 {
        return train_with_hooks(spec, dataset, cfg, before);
    }
    let radii = trial_radii(dataset, pgd.epsilon)?;
    let hook = AdversarialHook {
        radii: &radii,
        cfg: pgd,
    };
    let mut hooks = before.to_vec();
    hooks.push(&hook);
    train_with_hooks(spec, dataset, cfg, &hooks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{synth_generate, SynthConfig, Target};
    use crate::models::{build, ce_loss, train, trials_f64, Family};

    fn tiny() -> LabeledDataset {
        synth_generate(&SynthConfig {
            user_signature_strength: 1.0,
            ..SynthConfig::preset("tiny").unwrap()
        })
        .unwrap()
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let d = tiny();
        let m = build(&ArchitectureSpec::new(Family::Eegnet, 8, 64, 4), 1).unwrap();
        let xs = trials_f64(&d, &[0, 1, 2]);
        let cfg = PgdConfig {
            epsilon: 0.0,
            ..PgdConfig::default()
        };
        let radii = vec![0.0; 3];
        assert_eq!(
            pgd_attack(&m, &xs, &[1, 1, 1], &radii, &cfg, 4).unwrap(),
            xs
        );
    }

    #[test]
    fn output_stays_in_ball_and_raises_loss() {
        let d = tiny();
        let spec = ArchitectureSpec::new(Family::Eegnet, 8, 64, 4);
        let model = train(
            &spec,
            &d,
            &TrainConfig {
                epochs: 20,
                ..TrainConfig::for_target(Target::Uid, 2)
            },
        )
        .unwrap();
        let idx: Vec<usize> = (0..d.n_trials()).step_by(5).collect();
        let xs = trials_f64(&d, &idx);
        let labels: Vec<u32> = idx.iter().map(|&i| d.user_labels()[i]).collect();
        let cfg = PgdConfig {
            epsilon: 0.1,
            ..PgdConfig::default()
        };
        let all = trial_radii(&d, cfg.epsilon).unwrap();
        let radii: Vec<f64> = idx.iter().map(|&i| all[i]).collect();
        let adv = pgd_attack(&model.classifier, &xs, &labels, &radii, &cfg, 9).unwrap();
        for ((a, x), r) in adv.iter().zip(&xs).zip(&radii) {
            let dmax = a
                .iter()
                .zip(x)
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max);
            assert!(dmax <= r + 1e-9);
        }
        let mean_loss = |rows: &[Vec<f64>]| {
            let logits: Vec<f64> = model.classifier.batch_logits(rows).concat();
            ce_loss(&logits, 4, &labels).unwrap()
        };
        assert!(mean_loss(&adv) >= mean_loss(&xs));
    }

    #[test]
    fn zero_epsilon_training_equals_plain_training() {
        let d = tiny();
        let spec = ArchitectureSpec::new(Family::Shallowcnn, 8, 64, 4);
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::for_target(Target::Uid, 6)
        };
        let pgd = PgdConfig {
            epsilon: 0.0,
            ..PgdConfig::default()
        };
        let a = adversarial_train(&spec, &d, &pgd, &cfg).unwrap();
        let b = train(&spec, &d, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_configs() {
        assert!(PgdConfig {
            epsilon: -0.1,
            ..PgdConfig::default()
        }
        .validate()
        .is_err());
        assert!(PgdConfig {
            n_steps: 0,
            ..PgdConfig::default()
        }
        .validate()
        .is_err());
    }
}
