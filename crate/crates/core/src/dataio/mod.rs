//! Dataset model, bundle persistence, session splits, per-user statistics,
//! a synthetic EEG generator and a generic band-pass / resampling utility.

pub(crate) mod bundle;
mod filter;
mod split;
mod synth;

use std::collections::BTreeSet;

pub use bundle::{load_bundle, save_bundle, BundleMeta, BUNDLE_FORMAT_VERSION};
pub use filter::bandpass_downsample;
pub use split::{split_by_session, SplitSpec};
pub use synth::{synth_generate, SynthConfig};

use crate::{Error, Result};

/// Everything needed to build a [`LabeledDataset`].
///
/// Labels are 1-based: task labels in `1..=class_names.len()`, user labels in
/// `1..=user_names.len()`.
#[derive(Debug, Clone)]
pub struct DatasetParts {
    pub trials: Vec<f32>,
    pub n_channels: usize,
    pub n_samples: usize,
    pub task_labels: Vec<u32>,
    pub user_labels: Vec<u32>,
    pub session_ids: Vec<u32>,
    pub sampling_rate: f64,
    pub class_names: Vec<String>,
    pub user_names: Vec<String>,
}

/// Labeled multichannel EEG trials, row-major `[N, C, T]`.
///
/// Immutable once built; every transformation returns a new dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    trials: Vec<f32>,
    n_channels: usize,
    n_samples: usize,
    task_labels: Vec<u32>,
    user_labels: Vec<u32>,
    session_ids: Vec<u32>,
    sampling_rate: f64,
    class_names: Vec<String>,
    user_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(parts: DatasetParts) -> Result<Self> {
        let DatasetParts {
            trials,
            n_channels,
            n_samples,
            task_labels,
            user_labels,
            session_ids,
            sampling_rate,
            class_names,
            user_names,
        } = parts;
        let n = task_labels.len();
        if n == 0 {
            return Err(Error::invalid(
                "n_trials",
                "dataset must hold at least one trial",
            ));
        }
        if n_channels == 0 || n_samples == 0 {
            return Err(Error::invalid("n_channels", "geometry must be positive"));
        }
        for (field, len) in [
            ("user_labels", user_labels.len()),
            ("session_ids", session_ids.len()),
        ] {
            if len != n {
                return Err(Error::Shape {
                    field: field.into(),
                    expected: n,
                    found: len,
                });
            }
        }
        let expected = n * n_channels * n_samples;
        if trials.len() != expected {
            return Err(Error::Shape {
                field: "trials".into(),
                expected,
                found: trials.len(),
            });
        }
        if let Some(pos) = trials.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "trials",
                format!("non-finite value at flat index {pos}"),
            ));
        }
        if !(sampling_rate.is_finite() && sampling_rate > 0.0) {
            return Err(Error::invalid("sampling_rate_hz", "must be positive"));
        }
        check_labels("task_labels", &task_labels, class_names.len())?;
        check_labels("user_labels", &user_labels, user_names.len())?;
        Ok(Self {
            trials,
            n_channels,
            n_samples,
            task_labels,
            user_labels,
            session_ids,
            sampling_rate,
            class_names,
            user_names,
        })
    }

    pub fn n_trials(&self) -> usize {
        self.task_labels.len()
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Values per trial (`C * T`).
    pub fn trial_len(&self) -> usize {
        self.n_channels * self.n_samples
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn n_users(&self) -> usize {
        self.user_names.len()
    }

    pub fn sampling_rate(&self) -> f64 {
        self.sampling_rate
    }

    pub fn trials(&self) -> &[f32] {
        &self.trials
    }

    pub fn trial(&self, i: usize) -> &[f32] {
        let len = self.trial_len();
        &self.trials[i * len..(i + 1) * len]
    }

    pub fn task_labels(&self) -> &[u32] {
        &self.task_labels
    }

    pub fn user_labels(&self) -> &[u32] {
        &self.user_labels
    }

    pub fn session_ids(&self) -> &[u32] {
        &self.session_ids
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn user_names(&self) -> &[String] {
        &self.user_names
    }

    pub fn labels(&self, target: Target) -> &[u32] {
        match target {
            Target::Task => &self.task_labels,
            Target::Uid => &self.user_labels,
        }
    }

    pub fn n_labels(&self, target: Target) -> usize {
        match target {
            Target::Task => self.n_classes(),
            Target::Uid => self.n_users(),
        }
    }

    /// Distinct session ids in ascending order.
    pub fn sessions(&self) -> BTreeSet<u32> {
        self.session_ids.iter().copied().collect()
    }

    /// Users that own at least one trial, ascending.
    pub fn users_present(&self) -> BTreeSet<u32> {
        self.user_labels.iter().copied().collect()
    }

    pub fn into_parts(self) -> DatasetParts {
        DatasetParts {
            trials: self.trials,
            n_channels: self.n_channels,
            n_samples: self.n_samples,
            task_labels: self.task_labels,
            user_labels: self.user_labels,
            session_ids: self.session_ids,
            sampling_rate: self.sampling_rate,
            class_names: self.class_names,
            user_names: self.user_names,
        }
    }

    /// Same labels and metadata, new trial values of identical shape.
    pub fn with_trials(&self, trials: Vec<f32>) -> Result<Self> {
        let mut parts = self.clone().into_parts_without_trials();
        parts.trials = trials;
        Self::new(parts)
    }

    /// Same labels, new geometry (used by resampling and spatial filters).
    pub fn with_geometry(
        &self,
        trials: Vec<f32>,
        n_channels: usize,
        n_samples: usize,
        sampling_rate: f64,
    ) -> Result<Self> {
        let mut parts = self.clone().into_parts_without_trials();
        parts.trials = trials;
        parts.n_channels = n_channels;
        parts.n_samples = n_samples;
        parts.sampling_rate = sampling_rate;
        Self::new(parts)
    }

    fn into_parts_without_trials(self) -> DatasetParts {
        let mut parts = self.into_parts();
        parts.trials = Vec::new();
        parts
    }

    /// Subset of trials in the given order. Label spaces are kept, so the
    /// subset must still contain every class and user.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let len = self.trial_len();
        let mut trials = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            trials.extend_from_slice(self.trial(i));
        }
        Self::new(DatasetParts {
            trials,
            n_channels: self.n_channels,
            n_samples: self.n_samples,
            task_labels: indices.iter().map(|&i| self.task_labels[i]).collect(),
            user_labels: indices.iter().map(|&i| self.user_labels[i]).collect(),
            session_ids: indices.iter().map(|&i| self.session_ids[i]).collect(),
            sampling_rate: self.sampling_rate,
            class_names: self.class_names.clone(),
            user_names: self.user_names.clone(),
        })
    }

    /// SHA-256 over trial bytes and labels, hex encoded.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in &self.trials {
            h.update(v.to_le_bytes());
        }
        for labels in [&self.task_labels, &self.user_labels, &self.session_ids] {
            for v in labels {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Which label a classifier is trained on.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Task,
    Uid,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Task => "task",
            Target::Uid => "uid",
        }
    }
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "task" => Ok(Target::Task),
            "uid" | "user" => Ok(Target::Uid),
            other => Err(Error::invalid(
                "target",
                format!("unknown target `{other}`"),
            )),
        }
    }
}

fn check_labels(field: &str, labels: &[u32], n_values: usize) -> Result<()> {
    if n_values == 0 {
        return Err(Error::invalid(field, "label space is empty"));
    }
    let mut seen = vec![false; n_values];
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 || l as usize > n_values {
            return Err(Error::invalid(
                field,
                format!("trial {i} has label {l}, outside 1..={n_values}"),
            ));
        }
        seen[l as usize - 1] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::invalid(
            field,
            format!("label {} has no trials", missing + 1),
        ));
    }
    Ok(())
}

/// Population standard deviation over every sample of `user`'s trials.
pub fn user_std(dataset: &LabeledDataset, user: u32) -> Result<f64> {
    let rows: Vec<&[f32]> = (0..dataset.n_trials())
        .filter(|&i| dataset.user_labels()[i] == user)
        .map(|i| dataset.trial(i))
        .collect();
    if rows.is_empty() {
        return Err(Error::invalid("user", format!("user {user} has no trials")));
    }
    Ok(population_std(rows.iter().flat_map(|r| r.iter().copied())))
}

/// Per-user std for users `1..=U`, 0.0 for users without trials.
pub fn user_stds(dataset: &LabeledDataset) -> Vec<f64> {
    (1..=dataset.n_users() as u32)
        .map(|u| user_std(dataset, u).unwrap_or(0.0))
        .collect()
}

pub(crate) fn population_std(values: impl Iterator<Item = f32> + Clone) -> f64 {
    let (n, sum) = values
        .clone()
        .fold((0usize, 0.0f64), |(n, s), v| (n + 1, s + f64::from(v)));
    if n == 0 {
        return 0.0;
    }
    let mean = sum / n as f64;
    let ss: f64 = values.map(|v| (f64::from(v) - mean).powi(2)).sum();
    (ss / n as f64).sqrt()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Small dataset with predictable values: trial i, channel c, sample t = i + c*0.5 + t*0.25.
    pub(crate) fn toy(
        n_per_user: usize,
        users: usize,
        classes: usize,
        c: usize,
        t: usize,
    ) -> LabeledDataset {
        let n = n_per_user * users;
        let mut trials = Vec::with_capacity(n * c * t);
        for i in 0..n {
            for ch in 0..c {
                for s in 0..t {
                    trials.push(i as f32 + ch as f32 * 0.5 + s as f32 * 0.25);
                }
            }
        }
        LabeledDataset::new(DatasetParts {
            trials,
            n_channels: c,
            n_samples: t,
            task_labels: (0..n).map(|i| (i % classes) as u32 + 1).collect(),
            user_labels: (0..n).map(|i| (i / n_per_user) as u32 + 1).collect(),
            session_ids: (0..n).map(|i| ((i / classes) % 2) as u32 + 1).collect(),
            sampling_rate: 128.0,
            class_names: (1..=classes).map(|k| format!("class{k}")).collect(),
            user_names: (1..=users).map(|u| format!("user{u}")).collect(),
        })
        .unwrap()
    }

    #[test]
    fn rejects_out_of_range_labels_and_nan() {
        let mut parts = toy(2, 2, 2, 1, 2).into_parts();
        parts.user_labels[0] = 0;
        let err = LabeledDataset::new(parts.clone()).unwrap_err();
        assert!(matches!(err, Error::Invalid { ref field, .. } if field == "user_labels"));
        parts.user_labels[0] = 1;
        parts.trials[3] = f32::NAN;
        let err = LabeledDataset::new(parts).unwrap_err();
        assert!(matches!(err, Error::Invalid { ref field, .. } if field == "trials"));
    }

    #[test]
    fn missing_class_is_rejected() {
        let mut parts = toy(2, 2, 2, 1, 2).into_parts();
        parts.task_labels.iter_mut().for_each(|l| *l = 1);
        assert!(LabeledDataset::new(parts).is_err());
    }

    #[test]
    fn user_std_of_constant_and_symmetric_data() {
        let mut parts = toy(2, 2, 2, 2, 4).into_parts();
        let len = 8;
        parts.trials[..2 * len].iter_mut().for_each(|v| *v = 5.0);
        for (j, v) in parts.trials[2 * len..].iter_mut().enumerate() {
            *v = if j % 2 == 0 { -1.0 } else { 1.0 };
        }
        let d = LabeledDataset::new(parts).unwrap();
        assert_eq!(user_std(&d, 1).unwrap(), 0.0);
        assert_eq!(user_std(&d, 2).unwrap(), 1.0);
        assert!(user_std(&d, 3).is_err());
    }

    #[test]
    fn user_std_is_homogeneous_and_order_free() {
        let d = toy(3, 2, 3, 2, 5);
        let s = user_std(&d, 2).unwrap();
        let doubled = d
            .with_trials(d.trials().iter().map(|v| v * 2.0).collect())
            .unwrap();
        approx::assert_relative_eq!(
            user_std(&doubled, 2).unwrap(),
            2.0 * s,
            max_relative = 1e-12
        );
        let reversed = d
            .select(&(0..d.n_trials()).rev().collect::<Vec<_>>())
            .unwrap();
        approx::assert_relative_eq!(user_std(&reversed, 2).unwrap(), s, max_relative = 1e-12);
    }

    #[test]
    fn checksum_tracks_content() {
        let d = toy(2, 2, 2, 1, 3);
        let mut t = d.trials().to_vec();
        assert_eq!(d.checksum(), d.clone().checksum());
        t[0] += 1.0;
        assert_ne!(d.checksum(), d.with_trials(t).unwrap().checksum());
    }
}
