use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{bounded_f32, user_alphas, Method, PerturbationSet};
use crate::dataio::LabeledDataset;
use crate::{seed, Error, Result};

/// Binary digits per code.
pub const SN_DIGITS: usize = 10;
/// Samples per digit in the base wave.
pub const SN_REPEAT: usize = 10;
const N_CODES: usize = 1 << SN_DIGITS;

/// A user's square-wave code and per-channel amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnCode {
    pub code_int: u32,
    /// MSB-first binary expansion with `0 -> -1`.
    pub signed_bits: Vec<i8>,
    pub channel_amps: Vec<f64>,
}

impl SnCode {
    pub fn new(code_int: u32, channel_amps: Vec<f64>) -> Result<Self> {
        Ok(Self {
            code_int,
            signed_bits: signed_bits(code_int)?,
            channel_amps,
        })
    }
}

fn signed_bits(code: u32) -> Result<Vec<i8>> {
    if code as usize >= N_CODES {
        return Err(Error::invalid(
            "code_int",
            format!("{code} is outside 0..={}", N_CODES - 1),
        ));
    }
    Ok((0..SN_DIGITS)
        .rev()
        .map(|b| if code >> b & 1 == 1 { 1 } else { -1 })
        .collect())
}

/// Square wave of length `t`: each signed digit repeated ten times, the
/// 100-sample base wave tiled cyclically and truncated to `t`.
pub fn sn_waveform(code_int: u32, t: usize) -> Result<Vec<f64>> {
    if t == 0 {
        return Err(Error::invalid("t", "must be at least 1"));
    }
    let bits = signed_bits(code_int)?;
    let period = SN_DIGITS * SN_REPEAT;
    Ok((0..t)
        .map(|s| f64::from(bits[(s % period) / SN_REPEAT]))
        .collect())
}

/// Synthetic-noise perturbation: `Δ_u = α_u * a ⊗ w_u` with distinct random
/// codes per user and `a_j ~ U[0.5, 1.5]` (all ones without channel variation).
pub fn gen_sn(
    train: &LabeledDataset,
    alpha_multiplier: f64,
    seed: u64,
    channel_variation: bool,
) -> Result<PerturbationSet> {
    Ok(gen_sn_with_codes(train, alpha_multiplier, seed, channel_variation)?.0)
}

/// As [`gen_sn`], also returning the codes drawn for each user.
pub fn gen_sn_with_codes(
    train: &LabeledDataset,
    alpha_multiplier: f64,
    seed: u64,
    channel_variation: bool,
) -> Result<(PerturbationSet, Vec<(u32, SnCode)>)> {
    let alphas = user_alphas(train, alpha_multiplier)?;
    if alphas.len() > N_CODES {
        return Err(Error::invalid(
            "n_users",
            format!(
                "{} users cannot receive distinct {SN_DIGITS}-digit codes",
                alphas.len()
            ),
        ));
    }
    let mut rng = seed::rng(seed::derive(seed, "sn", 0));
    let picks = sample(&mut rng, N_CODES, alphas.len()).into_vec();
    let (c, t) = (train.n_channels(), train.n_samples());
    let mut codes = Vec::with_capacity(alphas.len());
    let mut deltas = std::collections::BTreeMap::new();
    for ((&u, &a), &code) in alphas.iter().zip(&picks) {
        let amps: Vec<f64> = (0..c)
            .map(|_| {
                if channel_variation {
                    rng.random_range(0.5..=1.5)
                } else {
                    1.0
                }
            })
            .collect();
        let wave = sn_waveform(code as u32, t)?;
        let bound = 1.5 * a;
        let d: Vec<f32> = amps
            .iter()
            .flat_map(|&aj| {
                wave.iter()
                    .map(move |&w| bounded_f32(a * aj * w, bound, false))
            })
            .collect();
        deltas.insert(u, d);
        codes.push((u, SnCode::new(code as u32, amps)?));
    }
    let pset = PerturbationSet {
        method: Method::Sn,
        n_channels: c,
        n_samples: t,
        deltas,
        alpha_per_user: alphas,
        alpha_multiplier,
        seed,
        history: Vec::new(),
    };
    Ok((pset, codes))
}
