use rand::Rng;

use super::{bounded_f32, user_alphas, Method, PerturbationSet};
use crate::dataio::LabeledDataset;
use crate::{seed, Result};

/// Uniform noise: `Δ_u = α_u * U(-1, 1)^{C x T}`, one independent stream per user.
pub fn gen_rand(
    train: &LabeledDataset,
    alpha_multiplier: f64,
    seed: u64,
) -> Result<PerturbationSet> {
    let alphas = user_alphas(train, alpha_multiplier)?;
    let len = train.trial_len();
    let deltas = alphas
        .iter()
        .map(|(&u, &a)| {
            let mut rng = seed::rng(seed::derive(seed, "rand", u64::from(u)));
            let d = (0..len)
                .map(|_| bounded_f32(a * rng.random_range(-1.0..=1.0), a, false))
                .collect();
            (u, d)
        })
        .collect();
    Ok(PerturbationSet {
        method: Method::Rand,
        n_channels: train.n_channels(),
        n_samples: train.n_samples(),
        deltas,
        alpha_per_user: alphas,
        alpha_multiplier,
        seed,
        history: Vec::new(),
    })
}
