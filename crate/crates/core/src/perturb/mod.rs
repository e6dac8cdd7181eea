//! User-wise privacy-preserving perturbations.
//!
//! Every user `u` in a training set gets one additive matrix `Δ_u` of shape
//! `[C, T]`, shared by all of that user's trials. Four generators are
//! provided:
//!
//! * [`gen_rand`]: uniform noise in `[-α_u, α_u]`.
//! * [`gen_sn`]: a coded square wave, scaled per channel.
//! * [`gen_emin`]: error-minimising noise against a UID model, optimised
//!   through segment shuffling.
//! * [`gen_emax`]: error-maximising noise against an ensemble of trained
//!   substitute UID models.
//!
//! Amplitudes are per user: `α_u = multiplier * user_std(train, u)`.

mod optimize;
mod sn;
mod trans;
mod uniform;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use optimize::{
    gen_emax, gen_emin, noise_objective, tanh_reparam, NoiseOptConfig, ObjectiveBatch,
};
pub use sn::{gen_sn, gen_sn_with_codes, sn_waveform, SnCode, SN_DIGITS, SN_REPEAT};
pub use trans::{segment_bounds, segment_time_map, trans_shuffle, trans_with_order};
pub use uniform::gen_rand;

use crate::dataio::bundle::{ensure_dir, read_f32, read_json, write_f32, write_json};
use crate::dataio::{user_std, LabeledDataset};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Rand,
    Sn,
    Emin,
    Emax,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Rand, Method::Sn, Method::Emin, Method::Emax];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Rand => "rand",
            Method::Sn => "sn",
            Method::Emin => "emin",
            Method::Emax => "emax",
        }
    }

    /// Entry-wise bound as a multiple of `α_u`, and whether it is strict.
    pub fn amplitude_bound(self) -> (f64, bool) {
        match self {
            Method::Rand => (1.0, false),
            Method::Sn => (1.5, false),
            Method::Emin | Method::Emax => (1.0, true),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rand" => Ok(Method::Rand),
            "sn" => Ok(Method::Sn),
            "emin" => Ok(Method::Emin),
            "emax" => Ok(Method::Emax),
            other => Err(Error::invalid(
                "method",
                format!("unknown method `{other}`"),
            )),
        }
    }
}

/// Amplitude multipliers per method, one row per dataset family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudePreset {
    pub rand: f64,
    pub sn: f64,
    pub emin: f64,
    pub emax: f64,
}

impl AmplitudePreset {
    /// Named presets: `mi1`, `mi2`, `mi3` (and alias `mi`), `mi4`, `ern`, `p300`.
    pub fn named(name: &str) -> Result<Self> {
        let p = |rand, sn, emin, emax| {
            Ok(Self {
                rand,
                sn,
                emin,
                emax,
            })
        };
        match name.to_ascii_lowercase().as_str() {
            "mi" | "mi1" | "mi2" | "mi3" => p(0.5, 0.5, 0.3, 0.3),
            "mi4" | "p300" => p(1.0, 1.0, 1.0, 1.0),
            "ern" => p(1.0, 1.0, 0.5, 0.5),
            other => Err(Error::invalid(
                "preset",
                format!("unknown amplitude preset `{other}`"),
            )),
        }
    }

    pub fn get(&self, method: Method) -> f64 {
        match method {
            Method::Rand => self.rand,
            Method::Sn => self.sn,
            Method::Emin => self.emin,
            Method::Emax => self.emax,
        }
    }
}

/// One `Δ_u` per user plus the amplitudes that bound them.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSet {
    pub method: Method,
    pub n_channels: usize,
    pub n_samples: usize,
    /// `Δ_u`, row-major `[C, T]`, keyed by 1-based user id.
    pub deltas: BTreeMap<u32, Vec<f32>>,
    /// Absolute amplitude `α_u`.
    pub alpha_per_user: BTreeMap<u32, f64>,
    pub alpha_multiplier: f64,
    pub seed: u64,
    /// Objective value per epoch for optimised methods; empty otherwise.
    pub history: Vec<f64>,
}

impl PerturbationSet {
    pub fn delta(&self, user: u32) -> Option<&[f32]> {
        self.deltas.get(&user).map(Vec::as_slice)
    }

    /// Largest `|Δ_u|` entry divided by `α_u`, over all users with `α_u > 0`.
    pub fn max_ratio(&self) -> f64 {
        self.deltas
            .iter()
            .filter_map(|(u, d)| {
                let a = self.alpha_per_user[u];
                (a > 0.0).then(|| d.iter().map(|v| f64::from(v.abs())).fold(0.0, f64::max) / a)
            })
            .fold(0.0, f64::max)
    }

    /// Exhaustive scan of the method's amplitude contract.
    pub fn check_amplitude(&self) -> Result<()> {
        let (mult, strict) = self.method.amplitude_bound();
        for (u, d) in &self.deltas {
            let bound = mult * self.alpha_per_user[u];
            for (j, &v) in d.iter().enumerate() {
                let v = f64::from(v).abs();
                let ok = if strict {
                    v < bound || (bound == 0.0 && v == 0.0)
                } else {
                    v <= bound
                };
                if !ok {
                    return Err(Error::invalid(
                        "deltas",
                        format!(
                            "user {u} entry {j}: |{v}| exceeds {} bound {bound}",
                            self.method
                        ),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Per-user `α_u = multiplier * user_std(train, u)` for users present in `train`.
pub fn user_alphas(train: &LabeledDataset, multiplier: f64) -> Result<BTreeMap<u32, f64>> {
    if !(multiplier.is_finite() && multiplier >= 0.0) {
        return Err(Error::invalid(
            "alpha_multiplier",
            "must be finite and non-negative",
        ));
    }
    train
        .users_present()
        .into_iter()
        .map(|u| Ok((u, multiplier * user_std(train, u)?)))
        .collect()
}

/// Round to `f32` while keeping `|v| <= bound` (or `< bound` when `strict`).
pub(crate) fn bounded_f32(v: f64, bound: f64, strict: bool) -> f32 {
    let mut x = v as f32;
    let within = |x: f32| {
        let a = f64::from(x.abs());
        if strict {
            a < bound || a == 0.0
        } else {
            a <= bound
        }
    };
    while !within(x) {
        x = step_toward_zero(x);
    }
    x
}

fn step_toward_zero(x: f32) -> f32 {
    if x == 0.0 {
        return 0.0;
    }
    f32::from_bits(x.to_bits() - 1)
}

/// Dispatch to the generator for `method`. RAND and SN draw from `cfg.seed`;
/// `sn_channel_variation` only affects SN.
pub fn generate(
    method: Method,
    train: &LabeledDataset,
    alpha_multiplier: f64,
    cfg: &NoiseOptConfig,
    sn_channel_variation: bool,
) -> Result<PerturbationSet> {
    match method {
        Method::Rand => gen_rand(train, alpha_multiplier, cfg.seed),
        Method::Sn => gen_sn(train, alpha_multiplier, cfg.seed, sn_channel_variation),
        Method::Emin => gen_emin(train, alpha_multiplier, cfg),
        Method::Emax => gen_emax(train, alpha_multiplier, cfg),
    }
}

/// `X_i' = X_i + Δ_{u_i}`; labels and sessions are untouched.
pub fn apply(train: &LabeledDataset, pset: &PerturbationSet) -> Result<LabeledDataset> {
    if pset.n_channels != train.n_channels() || pset.n_samples != train.n_samples() {
        return Err(Error::Shape {
            field: "deltas".into(),
            expected: train.trial_len(),
            found: pset.n_channels * pset.n_samples,
        });
    }
    let len = train.trial_len();
    let mut out = train.trials().to_vec();
    for (i, row) in out.chunks_exact_mut(len).enumerate() {
        let u = train.user_labels()[i];
        let d = pset
            .delta(u)
            .ok_or_else(|| Error::invalid("deltas", format!("no perturbation for user {u}")))?;
        if d.len() != len {
            return Err(Error::Shape {
                field: format!("deltas[{u}]"),
                expected: len,
                found: d.len(),
            });
        }
        for (x, dv) in row.iter_mut().zip(d) {
            *x += dv;
        }
    }
    train.with_trials(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PerturbMeta {
    format_version: u32,
    method: Method,
    alpha_multiplier: f64,
    seed: u64,
    n_channels: usize,
    n_samples: usize,
    /// Users in file order (ascending id).
    users: Vec<u32>,
    alpha_per_user: Vec<f64>,
    history: Vec<f64>,
}

/// Write `perturb_meta.json` and `deltas.f32` (`U x C x T`, user-id ascending).
pub fn save_perturbation(pset: &PerturbationSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    let meta = PerturbMeta {
        format_version: 1,
        method: pset.method,
        alpha_multiplier: pset.alpha_multiplier,
        seed: pset.seed,
        n_channels: pset.n_channels,
        n_samples: pset.n_samples,
        users: pset.deltas.keys().copied().collect(),
        alpha_per_user: pset.deltas.keys().map(|u| pset.alpha_per_user[u]).collect(),
        history: pset.history.clone(),
    };
    write_json(&dir.join("perturb_meta.json"), &meta)?;
    let flat: Vec<f32> = pset.deltas.values().flatten().copied().collect();
    write_f32(&dir.join("deltas.f32"), &flat)
}

pub fn load_perturbation(dir: impl AsRef<Path>) -> Result<PerturbationSet> {
    let dir = dir.as_ref();
    let meta: PerturbMeta = read_json(&dir.join("perturb_meta.json"))?;
    if meta.alpha_per_user.len() != meta.users.len() {
        return Err(Error::Shape {
            field: "alpha_per_user".into(),
            expected: meta.users.len(),
            found: meta.alpha_per_user.len(),
        });
    }
    let flat = read_f32(&dir.join("deltas.f32"))?;
    let len = meta.n_channels * meta.n_samples;
    if flat.len() != len * meta.users.len() {
        return Err(Error::Shape {
            field: "deltas.f32".into(),
            expected: len * meta.users.len(),
            found: flat.len(),
        });
    }
    let deltas = meta
        .users
        .iter()
        .zip(flat.chunks_exact(len.max(1)))
        .map(|(&u, d)| (u, d.to_vec()))
        .collect();
    Ok(PerturbationSet {
        method: meta.method,
        n_channels: meta.n_channels,
        n_samples: meta.n_samples,
        deltas,
        alpha_per_user: meta
            .users
            .iter()
            .copied()
            .zip(meta.alpha_per_user)
            .collect(),
        alpha_multiplier: meta.alpha_multiplier,
        seed: meta.seed,
        history: meta.history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::tests::toy;
    use proptest::prelude::*;

    fn constant_pset(d: &LabeledDataset, value: impl Fn(u32, usize) -> f32) -> PerturbationSet {
        let len = d.trial_len();
        PerturbationSet {
            method: Method::Rand,
            n_channels: d.n_channels(),
            n_samples: d.n_samples(),
            deltas: d
                .users_present()
                .into_iter()
                .map(|u| (u, (0..len).map(|j| value(u, j)).collect()))
                .collect(),
            alpha_per_user: d.users_present().into_iter().map(|u| (u, 1.0)).collect(),
            alpha_multiplier: 1.0,
            seed: 0,
            history: vec![],
        }
    }

    #[test]
    fn zero_set_is_identity_and_inverse_is_exact() {
        let d = toy(3, 2, 2, 2, 4);
        assert_eq!(apply(&d, &constant_pset(&d, |_, _| 0.0)).unwrap(), d);
        // Dyadic values keep f32 arithmetic exact.
        let p = constant_pset(&d, |u, j| (u as f32) * 0.125 - j as f32 * 0.25);
        let out = apply(&d, &p).unwrap();
        for i in 0..d.n_trials() {
            let delta = p.delta(d.user_labels()[i]).unwrap();
            let back: Vec<f32> = out.trial(i).iter().zip(delta).map(|(a, b)| a - b).collect();
            assert_eq!(back, d.trial(i));
        }
        assert_eq!(out.user_labels(), d.user_labels());
        assert_eq!(out.session_ids(), d.session_ids());
    }

    #[test]
    fn missing_user_or_shape_mismatch() {
        let d = toy(3, 2, 2, 2, 4);
        let mut p = constant_pset(&d, |_, _| 0.5);
        p.deltas.remove(&2);
        assert!(apply(&d, &p).is_err());
        let mut p = constant_pset(&d, |_, _| 0.5);
        p.n_samples = 5;
        assert!(apply(&d, &p).is_err());
    }

    #[test]
    fn bounded_rounding_respects_limits() {
        let b = 0.1f64;
        let x = bounded_f32(0.1, b, false);
        assert!(f64::from(x) <= b);
        let y = bounded_f32(0.1, b, true);
        assert!(f64::from(y) < b);
        assert!(f64::from(bounded_f32(-0.1, b, true)) > -b);
        assert_eq!(bounded_f32(0.0, 0.0, true), 0.0);
    }

    #[test]
    fn bundle_round_trip() {
        let d = toy(3, 2, 2, 2, 4);
        let mut p = constant_pset(&d, |u, j| u as f32 * 0.1 + j as f32);
        p.history = vec![1.0, 0.5];
        let dir = tempfile::tempdir().unwrap();
        save_perturbation(&p, dir.path()).unwrap();
        assert_eq!(load_perturbation(dir.path()).unwrap(), p);
    }

    #[test]
    fn presets() {
        let mi = AmplitudePreset::named("mi").unwrap();
        assert_eq!((mi.rand, mi.sn, mi.emin, mi.emax), (0.5, 0.5, 0.3, 0.3));
        let ern = AmplitudePreset::named("ERN").unwrap();
        assert_eq!(ern.get(Method::Emax), 0.5);
        assert_eq!(
            AmplitudePreset::named("p300").unwrap().get(Method::Emin),
            1.0
        );
        assert!(AmplitudePreset::named("x").is_err());
    }

    proptest! {
        #[test]
        fn same_user_differences_survive(seed in 0u64..1000) {
            let d = toy(4, 3, 2, 2, 5);
            let p = gen_rand(&d, 0.5, seed).unwrap();
            let out = apply(&d, &p).unwrap();
            for u in 1..=3u32 {
                let idx: Vec<usize> = (0..d.n_trials()).filter(|&i| d.user_labels()[i] == u).collect();
                let (a, b) = (idx[0], idx[1]);
                for j in 0..d.trial_len() {
                    let before = f64::from(d.trial(a)[j]) - f64::from(d.trial(b)[j]);
                    let after = f64::from(out.trial(a)[j]) - f64::from(out.trial(b)[j]);
                    prop_assert!((before - after).abs() < 1e-5 * (1.0 + before.abs()));
                }
            }
        }
    }
}
