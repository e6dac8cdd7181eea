use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::models::{BatchHook, Classifier};
use crate::perturb::trans_shuffle;
use crate::{par, seed, Error, Result};

/// Training-time data transformation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    None,
    /// Surface Laplacian on both training and test data.
    Sl,
    /// Random circular temporal shift of each training trial.
    Ts,
    /// Random segment recombination of each training trial.
    Tr,
}

impl Transform {
    pub const ALL: [Transform; 4] = [Transform::None, Transform::Sl, Transform::Ts, Transform::Tr];

    pub fn as_str(self) -> &'static str {
        match self {
            Transform::None => "none",
            Transform::Sl => "sl",
            Transform::Ts => "ts",
            Transform::Tr => "tr",
        }
    }
}

impl std::fmt::Display for Transform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Transform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Transform::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid("transform", format!("unknown transform `{s}`")))
    }
}

/// Circularly shift every channel of a row-major `[C, T]` trial by `offset`
/// samples (positive delays the signal).
pub fn shift_by<T: Copy>(trial: &[T], t: usize, offset: i64) -> Result<Vec<T>> {
    if t == 0 || !trial.len().is_multiple_of(t) {
        return Err(Error::Shape {
            field: "trial".into(),
            expected: t,
            found: trial.len(),
        });
    }
    let k = offset.rem_euclid(t as i64) as usize;
    Ok(trial
        .chunks_exact(t)
        .flat_map(|row| (0..t).map(move |j| row[(j + t - k) % t]))
        .collect())
}

/// Circular shift by an offset drawn uniformly from `[-max_offset, max_offset]`.
pub fn temporal_shift<T: Copy>(
    trial: &[T],
    t: usize,
    max_offset: usize,
    seed: u64,
) -> Result<Vec<T>> {
    if max_offset >= t.max(1) {
        return Err(Error::invalid(
            "max_offset",
            format!("must be below the trial length {t}"),
        ));
    }
    let m = max_offset as i64;
    let offset = seed::rng(seed).random_range(-m..=m);
    shift_by(trial, t, offset)
}

/// Segment recombination; the same operation as the shuffle used while
/// optimising error-minimising noise.
pub fn temporal_recombination<T: Copy>(
    trial: &[T],
    t: usize,
    n_segments: usize,
    seed: u64,
) -> Result<Vec<T>> {
    trans_shuffle(trial, t, n_segments, seed)
}

/// Per-batch augmentation with a fresh draw per trial and step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentHook {
    Shift { n_samples: usize, max_offset: usize },
    Recombine { n_samples: usize, n_segments: usize },
}

impl BatchHook for AugmentHook {
    fn prepare(
        &self,
        _: &Classifier,
        batch: &mut [Vec<f64>],
        _: &[u32],
        _: &[usize],
        seed: u64,
    ) -> Result<()> {
        let out: Vec<Result<Vec<f64>>> = par::map_range(batch.len(), |i| {
            let s = seed::derive(seed, "augment", i as u64);
            match *self {
                AugmentHook::Shift {
                    n_samples,
                    max_offset,
                } => temporal_shift(&batch[i], n_samples, max_offset, s),
                AugmentHook::Recombine {
                    n_samples,
                    n_segments,
                } => temporal_recombination(&batch[i], n_samples, n_segments, s),
            }
        });
        for (b, o) in batch.iter_mut().zip(out) {
            *b = o?;
        }
        Ok(())
    }
}
