//! Gradient-based perturbation synthesis (error-minimising and
//! error-maximising noise) under the `Δ = α tanh(Λ)` parameterisation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::trans::{remap, segment_time_map};
use super::{bounded_f32, user_alphas, Method, PerturbationSet};
use crate::dataio::{population_std, LabeledDataset, Target};
use crate::models::{
    build, train, trials_f64, Adam, ArchitectureSpec, Classifier, Family, TrainConfig,
};
use crate::{par, seed, Error, Result};

/// `Δ = α · tanh(Λ)` elementwise.
pub fn tanh_reparam(lambda: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::invalid("alpha", "must be finite and non-negative"));
    }
    if let Some(j) = lambda.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid("lambda", format!("entry {j} is not finite")));
    }
    Ok(lambda.iter().map(|l| alpha * l.tanh()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseOptConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Segment count of the shuffle applied inside the error-minimising objective.
    pub n_segments: usize,
    pub use_trans: bool,
    pub n_substitutes: usize,
    /// When off, a single substitute is used regardless of `n_substitutes`.
    pub use_ensemble: bool,
    pub substitute_arch: Family,
    pub batch_size: usize,
    pub seed: u64,
    /// Error-minimising mode only: model steps taken per noise step. Zero keeps
    /// the randomly initialised model fixed.
    pub model_steps: usize,
    /// Schedule for substitute training and alternating model updates. The
    /// target and seed are overridden.
    pub substitute_train: TrainConfig,
}

impl Default for NoiseOptConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.01,
            n_segments: 8,
            use_trans: true,
            n_substitutes: 3,
            use_ensemble: true,
            substitute_arch: Family::Eegnet,
            batch_size: 128,
            seed: 0,
            model_steps: 0,
            substitute_train: TrainConfig::default(),
        }
    }
}

impl NoiseOptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be at least 1"));
        }
        if self.n_segments == 0 {
            return Err(Error::invalid("n_segments", "must be at least 1"));
        }
        if self.n_substitutes == 0 {
            return Err(Error::invalid("n_substitutes", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        Ok(())
    }

    fn n_models(&self) -> usize {
        if self.use_ensemble {
            self.n_substitutes
        } else {
            1
        }
    }
}

/// A batch of clean trials seen by the noise objective.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveBatch<'a> {
    pub trials: &'a [Vec<f64>],
    pub users: &'a [u32],
    pub n_samples: usize,
    /// `(n_segments, seed)`: each trial is segment-shuffled with
    /// `derive(seed, "trans", i)` after the perturbation is added.
    pub shuffle: Option<(usize, u64)>,
}

/// Mean over the batch of `Σ_m CE(D_m(T(X_i + α_u tanh Λ_u)), u_i)`, and its
/// gradient with respect to each user's `Λ_u`. Models run without dropout.
pub fn noise_objective(
    models: &[&Classifier],
    batch: &ObjectiveBatch<'_>,
    lambda: &BTreeMap<u32, Vec<f64>>,
    alpha: &BTreeMap<u32, f64>,
) -> Result<(f64, BTreeMap<u32, Vec<f64>>)> {
    if batch.trials.len() != batch.users.len() || batch.trials.is_empty() {
        return Err(Error::Shape {
            field: "users".into(),
            expected: batch.trials.len(),
            found: batch.users.len(),
        });
    }
    let mut deltas = BTreeMap::new();
    for &u in batch.users {
        if let std::collections::btree_map::Entry::Vacant(e) = deltas.entry(u) {
            let l = lambda
                .get(&u)
                .ok_or_else(|| Error::invalid("lambda", format!("no entry for user {u}")))?;
            let a = *alpha
                .get(&u)
                .ok_or_else(|| Error::invalid("alpha", format!("no entry for user {u}")))?;
            e.insert(tanh_reparam(l, a)?);
        }
    }
    let t = batch.n_samples;
    let per_trial = par::map_range(batch.trials.len(), |i| {
        let u = batch.users[i];
        let x: Vec<f64> = batch.trials[i]
            .iter()
            .zip(&deltas[&u])
            .map(|(a, b)| a + b)
            .collect();
        let map = batch
            .shuffle
            .map(|(n, s)| segment_time_map(t, n, seed::derive(s, "trans", i as u64)))
            .transpose()?;
        let x = match &map {
            Some(m) => remap(&x, t, m),
            None => x,
        };
        let mut loss = 0.0;
        let mut grad = vec![0.0; x.len()];
        for model in models {
            let g = model.sample_grad(&x, u, None, false);
            loss += g.loss;
            grad.iter_mut().zip(&g.input).for_each(|(a, b)| *a += b);
        }
        // Undo the shuffle: output sample j came from input sample map[j].
        if let Some(m) = &map {
            let mut back = vec![0.0; grad.len()];
            for (row_out, row_in) in grad.chunks_exact(t).zip(back.chunks_exact_mut(t)) {
                for (j, &src) in m.iter().enumerate() {
                    row_in[src] += row_out[j];
                }
            }
            grad = back;
        }
        Ok((loss, grad))
    });
    let n = batch.trials.len() as f64;
    let mut total = 0.0;
    let mut grads: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (i, r) in per_trial.into_iter().enumerate() {
        let (loss, g) = r?;
        total += loss;
        let u = batch.users[i];
        let acc = grads.entry(u).or_insert_with(|| vec![0.0; g.len()]);
        acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    for (u, g) in grads.iter_mut() {
        let a = alpha[u];
        for (gv, l) in g.iter_mut().zip(&lambda[u]) {
            let th = l.tanh();
            *gv *= a * (1.0 - th * th) / n;
        }
    }
    Ok((total / n, grads))
}

/// Error-minimising noise: a randomly initialised UID model (fixed unless
/// `model_steps > 0`) is made confident on `T(X + Δ_u)`.
pub fn gen_emin(
    train: &LabeledDataset,
    alpha_multiplier: f64,
    cfg: &NoiseOptConfig,
) -> Result<PerturbationSet> {
    cfg.validate()?;
    check_users(train)?;
    let spec = uid_spec(train, cfg.substitute_arch);
    let mut model = build(&spec, seed::derive(cfg.seed, "emin-model", 0))?;
    model.set_input_scale(population_std(train.trials().iter().copied()));
    let shuffle = cfg.use_trans.then_some(cfg.n_segments);
    let mut model_opt = (cfg.model_steps > 0).then(|| Adam::new(model.n_params()));
    optimise(
        train,
        alpha_multiplier,
        cfg,
        Method::Emin,
        1.0,
        |step, xs, users, lambda, alphas| {
            let shuffle_at =
                |k: u64| shuffle.map(|n| (n, seed::derive(cfg.seed, "emin-trans", step << 8 | k)));
            if let Some(opt) = model_opt.as_mut() {
                for k in 0..cfg.model_steps {
                    let batch = ObjectiveBatch {
                        trials: xs,
                        users,
                        n_samples: train.n_samples(),
                        shuffle: shuffle_at(k as u64 + 1),
                    };
                    model_step(
                        &mut model,
                        opt,
                        &batch,
                        lambda,
                        alphas,
                        cfg.substitute_train.learning_rate,
                        step,
                        k,
                    )?;
                }
            }
            let batch = ObjectiveBatch {
                trials: xs,
                users,
                n_samples: train.n_samples(),
                shuffle: shuffle_at(0),
            };
            noise_objective(&[&model], &batch, lambda, alphas)
        },
    )
}

/// Error-maximising noise against an ensemble of substitute UID models
/// trained on the clean data.
pub fn gen_emax(
    train_set: &LabeledDataset,
    alpha_multiplier: f64,
    cfg: &NoiseOptConfig,
) -> Result<PerturbationSet> {
    cfg.validate()?;
    check_users(train_set)?;
    let spec = uid_spec(train_set, cfg.substitute_arch);
    let substitutes = (0..cfg.n_models())
        .map(|m| {
            let tc = TrainConfig {
                target: Target::Uid,
                seed: seed::derive(cfg.seed, "substitute", m as u64),
                ..cfg.substitute_train.clone()
            };
            train(&spec, train_set, &tc).map(|t| t.classifier)
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Classifier> = substitutes.iter().collect();
    optimise(
        train_set,
        alpha_multiplier,
        cfg,
        Method::Emax,
        -1.0,
        |_, xs, users, lambda, alphas| {
            let batch = ObjectiveBatch {
                trials: xs,
                users,
                n_samples: train_set.n_samples(),
                shuffle: None,
            };
            noise_objective(&refs, &batch, lambda, alphas)
        },
    )
}

fn check_users(train: &LabeledDataset) -> Result<()> {
    if train.users_present().len() < 2 {
        return Err(Error::invalid(
            "user_labels",
            "noise optimisation needs at least two users",
        ));
    }
    Ok(())
}

fn uid_spec(train: &LabeledDataset, family: Family) -> ArchitectureSpec {
    ArchitectureSpec::new(
        family,
        train.n_channels(),
        train.n_samples(),
        train.n_users(),
    )
}

/// Shared Adam loop over `Λ`. `sign = 1` minimises the objective, `-1`
/// maximises it. Batches follow one fixed seeded order for every epoch, and
/// each user's moments advance only on steps where that user is present.
fn optimise(
    train: &LabeledDataset,
    alpha_multiplier: f64,
    cfg: &NoiseOptConfig,
    method: Method,
    sign: f64,
    mut objective: impl FnMut(
        u64,
        &[Vec<f64>],
        &[u32],
        &BTreeMap<u32, Vec<f64>>,
        &BTreeMap<u32, f64>,
    ) -> Result<(f64, BTreeMap<u32, Vec<f64>>)>,
) -> Result<PerturbationSet> {
    let alphas = user_alphas(train, alpha_multiplier)?;
    let len = train.trial_len();
    let mut lambda: BTreeMap<u32, Vec<f64>> = alphas.keys().map(|&u| (u, vec![0.0; len])).collect();
    let mut opts: BTreeMap<u32, Adam> = alphas.keys().map(|&u| (u, Adam::new(len))).collect();
    let mut order: Vec<usize> = (0..train.n_trials()).collect();
    order.shuffle(&mut seed::rng(seed::derive(cfg.seed, "noise-order", 0)));
    let users_all = train.user_labels();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut epoch_sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let xs = trials_f64(train, idx);
            let users: Vec<u32> = idx.iter().map(|&i| users_all[i]).collect();
            let (value, grads) = objective(step, &xs, &users, &lambda, &alphas)?;
            if !value.is_finite() || grads.values().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    stage: method.as_str(),
                    epoch,
                    step: step as usize,
                });
            }
            for (u, mut g) in grads {
                if sign < 0.0 {
                    g.iter_mut().for_each(|v| *v = -*v);
                }
                let opt = opts.get_mut(&u).expect("every user has an optimiser");
                opt.step(
                    lambda.get_mut(&u).expect("every user has a lambda"),
                    &g,
                    cfg.learning_rate,
                );
            }
            epoch_sum += value * idx.len() as f64;
            step += 1;
        }
        history.push(epoch_sum / train.n_trials() as f64);
    }
    let mut deltas = BTreeMap::new();
    for (&u, l) in &lambda {
        let a = alphas[&u];
        let d = tanh_reparam(l, a)?;
        deltas.insert(u, d.into_iter().map(|v| bounded_f32(v, a, true)).collect());
    }
    Ok(PerturbationSet {
        method,
        n_channels: train.n_channels(),
        n_samples: train.n_samples(),
        deltas,
        alpha_per_user: alphas,
        alpha_multiplier,
        seed: cfg.seed,
        history,
    })
}

/// One Adam step on the model parameters, minimising CE on the perturbed,
/// shuffled batch with dropout enabled.
#[allow(clippy::too_many_arguments)]
fn model_step(
    model: &mut Classifier,
    opt: &mut Adam,
    batch: &ObjectiveBatch<'_>,
    lambda: &BTreeMap<u32, Vec<f64>>,
    alpha: &BTreeMap<u32, f64>,
    lr: f64,
    step: u64,
    k: usize,
) -> Result<()> {
    let t = batch.n_samples;
    let mut xs = Vec::with_capacity(batch.trials.len());
    for (i, x) in batch.trials.iter().enumerate() {
        let u = batch.users[i];
        let d = tanh_reparam(&lambda[&u], alpha[&u])?;
        let p: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
        xs.push(match batch.shuffle {
            Some((n, s)) => remap(
                &p,
                t,
                &segment_time_map(t, n, seed::derive(s, "trans", i as u64))?,
            ),
            None => p,
        });
    }
    let step_seed = seed::derive(step, "emin-dropout", k as u64);
    let m: &Classifier = model;
    let grads = par::map_range(xs.len(), |i| {
        let mut rng = seed::rng(seed::derive(step_seed, "sample", i as u64));
        m.sample_grad(&xs[i], batch.users[i], Some(&mut rng), true)
    });
    let mut total = vec![0.0; model.n_params()];
    for g in &grads {
        total
            .iter_mut()
            .zip(g.params.as_ref().expect("param grads requested"))
            .for_each(|(a, b)| *a += b);
    }
    let n = xs.len() as f64;
    if total.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence {
            stage: "emin-model",
            epoch: 0,
            step: step as usize,
        });
    }
    total.iter_mut().for_each(|v| *v /= n);
    opt.step(model.params_mut(), &total, lr);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::tests::toy;
    use approx::assert_relative_eq;

    #[test]
    fn tanh_reparam_cases() {
        assert_eq!(tanh_reparam(&[0.0, 0.0], 0.7).unwrap(), vec![0.0, 0.0]);
        let d = tanh_reparam(&[10.0], 0.3).unwrap()[0];
        assert!(d < 0.3 && d > 0.2999);
        let pos = tanh_reparam(&[0.4, -1.3], 2.0).unwrap();
        let neg = tanh_reparam(&[-0.4, 1.3], 2.0).unwrap();
        assert_eq!(pos, neg.iter().map(|v| -v).collect::<Vec<_>>());
        assert!(tanh_reparam(&[f64::NAN], 1.0).is_err());
        assert!(tanh_reparam(&[0.0], -1.0).is_err());
    }

    fn fd_check(shuffle: Option<(usize, u64)>, n_models: usize) {
        let d = toy(2, 3, 2, 3, 40);
        let spec = ArchitectureSpec::new(Family::Eegnet, 3, 40, 3);
        let models: Vec<Classifier> = (0..n_models)
            .map(|m| build(&spec, 100 + m as u64).unwrap())
            .collect();
        let refs: Vec<&Classifier> = models.iter().collect();
        let xs = trials_f64(&d, &[0, 2, 5]);
        let users: Vec<u32> = [0, 2, 5].iter().map(|&i| d.user_labels()[i]).collect();
        let batch = ObjectiveBatch {
            trials: &xs,
            users: &users,
            n_samples: 40,
            shuffle,
        };
        let alphas: BTreeMap<u32, f64> = [(1, 0.8), (2, 1.1), (3, 0.5)].into_iter().collect();
        let lambda: BTreeMap<u32, Vec<f64>> = alphas
            .keys()
            .map(|&u| {
                (
                    u,
                    (0..120)
                        .map(|j| ((j * 37 + u as usize * 11) % 19) as f64 / 9.0 - 1.0)
                        .collect(),
                )
            })
            .collect();
        let (_, g) = noise_objective(&refs, &batch, &lambda, &alphas).unwrap();
        let eval =
            |l: &BTreeMap<u32, Vec<f64>>| noise_objective(&refs, &batch, l, &alphas).unwrap().0;
        let h = 1e-6;
        // Entries can be tiny next to the objective, so compare norm-wise over
        // probed entries and along a direction touching every entry.
        for &u in alphas.keys() {
            let (mut diff, mut norm) = (0.0, 0.0);
            for j in [0usize, 7, 39, 41, 80, 119] {
                let mut lp = lambda.clone();
                lp.get_mut(&u).unwrap()[j] += h;
                let mut lm = lambda.clone();
                lm.get_mut(&u).unwrap()[j] -= h;
                let fd = (eval(&lp) - eval(&lm)) / (2.0 * h);
                diff += (fd - g[&u][j]).powi(2);
                norm += g[&u][j].powi(2);
            }
            assert!(
                diff.sqrt() < 1e-4 * norm.sqrt(),
                "user {u}: norm-wise error {}",
                (diff / norm).sqrt()
            );

            let dir: Vec<f64> = (0..120)
                .map(|j| if j % 3 == 0 { -1.0 } else { 1.0 })
                .collect();
            let shifted = |step: f64| {
                let mut l = lambda.clone();
                for (v, d) in l.get_mut(&u).unwrap().iter_mut().zip(&dir) {
                    *v += step * d;
                }
                l
            };
            let fd = (eval(&shifted(h)) - eval(&shifted(-h))) / (2.0 * h);
            let an: f64 = g[&u].iter().zip(&dir).map(|(a, b)| a * b).sum();
            assert!(
                (fd - an).abs() < 1e-4 * an.abs(),
                "user {u}: directional fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        fd_check(None, 1);
        fd_check(Some((4, 77)), 1);
        fd_check(None, 3);
    }

    fn small_cfg() -> NoiseOptConfig {
        NoiseOptConfig {
            epochs: 3,
            batch_size: 8,
            n_substitutes: 2,
            n_segments: 4,
            substitute_train: TrainConfig {
                epochs: 2,
                ..TrainConfig::default()
            },
            seed: 5,
            ..NoiseOptConfig::default()
        }
    }

    #[test]
    fn emin_bounds_history_and_determinism() {
        let d = toy(4, 3, 2, 3, 40);
        let cfg = small_cfg();
        let p = gen_emin(&d, 0.3, &cfg).unwrap();
        p.check_amplitude().unwrap();
        assert_eq!(p.history.len(), 3);
        assert_eq!(p, gen_emin(&d, 0.3, &cfg).unwrap());
        let alt = gen_emin(
            &d,
            0.3,
            &NoiseOptConfig {
                model_steps: 1,
                ..cfg.clone()
            },
        )
        .unwrap();
        alt.check_amplitude().unwrap();
        assert_ne!(alt.deltas, p.deltas);
    }

    #[test]
    fn emax_bounds_and_zero_amplitude() {
        let d = toy(4, 3, 2, 3, 40);
        let cfg = small_cfg();
        let p = gen_emax(&d, 0.3, &cfg).unwrap();
        p.check_amplitude().unwrap();
        assert_eq!(p.method, Method::Emax);
        let z = gen_emax(
            &d,
            0.0,
            &NoiseOptConfig {
                use_ensemble: false,
                ..cfg
            },
        )
        .unwrap();
        assert!(z.deltas.values().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn needs_two_users() {
        let d = toy(4, 1, 2, 3, 40);
        assert!(gen_emin(&d, 0.3, &small_cfg()).is_err());
        assert_relative_eq!(NoiseOptConfig::default().learning_rate, 0.01);
    }
}
