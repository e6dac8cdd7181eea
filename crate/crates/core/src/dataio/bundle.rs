//! On-disk dataset bundle: `meta.json` plus raw little-endian `trials.f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetParts, LabeledDataset};
use crate::{Error, Result};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;
const META_FILE: &str = "meta.json";
const TRIALS_FILE: &str = "trials.f32";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub n_trials: usize,
    pub n_channels: usize,
    pub n_samples: usize,
    pub sampling_rate_hz: f64,
    pub n_classes: usize,
    pub n_users: usize,
    pub task_labels: Vec<u32>,
    pub user_labels: Vec<u32>,
    pub session_ids: Vec<u32>,
    pub class_names: Vec<String>,
    pub user_names: Vec<String>,
    pub format_version: u32,
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_f32(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::invalid(
            path.file_name()
                .map_or_else(String::new, |f| f.to_string_lossy().into_owned()),
            format!("byte length {} is not a multiple of 4", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn write_f32(path: &Path, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Read and validate a dataset bundle directory.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<LabeledDataset> {
    let dir = dir.as_ref();
    let meta: BundleMeta = read_json(&dir.join(META_FILE))?;
    if meta.format_version != BUNDLE_FORMAT_VERSION {
        return Err(Error::invalid(
            "format_version",
            format!("unsupported version {}", meta.format_version),
        ));
    }
    let check = |field: &str, expected: usize, found: usize| {
        if expected == found {
            Ok(())
        } else {
            Err(Error::Shape {
                field: field.into(),
                expected,
                found,
            })
        }
    };
    check("task_labels", meta.n_trials, meta.task_labels.len())?;
    check("user_labels", meta.n_trials, meta.user_labels.len())?;
    check("session_ids", meta.n_trials, meta.session_ids.len())?;
    check("class_names", meta.n_classes, meta.class_names.len())?;
    check("user_names", meta.n_users, meta.user_names.len())?;
    let trials = read_f32(&dir.join(TRIALS_FILE))?;
    check(
        TRIALS_FILE,
        meta.n_trials * meta.n_channels * meta.n_samples,
        trials.len(),
    )?;
    if let Some(pos) = trials.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(
            TRIALS_FILE,
            format!("non-finite value at flat index {pos}"),
        ));
    }
    LabeledDataset::new(DatasetParts {
        trials,
        n_channels: meta.n_channels,
        n_samples: meta.n_samples,
        task_labels: meta.task_labels,
        user_labels: meta.user_labels,
        session_ids: meta.session_ids,
        sampling_rate: meta.sampling_rate_hz,
        class_names: meta.class_names,
        user_names: meta.user_names,
    })
}

/// Write `dataset` as a bundle directory, creating it if needed.
pub fn save_bundle(dataset: &LabeledDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    let meta = BundleMeta {
        n_trials: dataset.n_trials(),
        n_channels: dataset.n_channels(),
        n_samples: dataset.n_samples(),
        sampling_rate_hz: dataset.sampling_rate(),
        n_classes: dataset.n_classes(),
        n_users: dataset.n_users(),
        task_labels: dataset.task_labels().to_vec(),
        user_labels: dataset.user_labels().to_vec(),
        session_ids: dataset.session_ids().to_vec(),
        class_names: dataset.class_names().to_vec(),
        user_names: dataset.user_names().to_vec(),
        format_version: BUNDLE_FORMAT_VERSION,
    };
    write_json(&dir.join(META_FILE), &meta)?;
    write_f32(&dir.join(TRIALS_FILE), dataset.trials())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::tests::toy;

    #[test]
    fn round_trip_is_bit_exact_and_deterministic() {
        let d = toy(3, 2, 2, 3, 7);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        save_bundle(&d, a.path()).unwrap();
        save_bundle(&d, b.path()).unwrap();
        assert_eq!(load_bundle(a.path()).unwrap(), d);
        for f in [META_FILE, TRIALS_FILE] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn single_trial_bundle() {
        let d = toy(1, 1, 1, 2, 3);
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&d, dir.path()).unwrap();
        assert_eq!(load_bundle(dir.path()).unwrap().n_trials(), 1);
    }

    #[test]
    fn truncated_trials_file_is_a_shape_error() {
        let d = toy(5, 2, 2, 2, 3);
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&d, dir.path()).unwrap();
        let raw = fs::read(dir.path().join(TRIALS_FILE)).unwrap();
        fs::write(dir.path().join(TRIALS_FILE), &raw[..raw.len() - 2 * 3 * 4]).unwrap();
        match load_bundle(dir.path()).unwrap_err() {
            Error::Shape {
                field,
                expected,
                found,
            } => {
                assert_eq!(field, TRIALS_FILE);
                assert_eq!((expected, found), (60, 54));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn zero_user_label_is_a_validation_error() {
        let d = toy(2, 2, 2, 1, 2);
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&d, dir.path()).unwrap();
        let mut meta: BundleMeta = read_json(&dir.path().join(META_FILE)).unwrap();
        meta.user_labels[1] = 0;
        write_json(&dir.path().join(META_FILE), &meta).unwrap();
        let err = load_bundle(dir.path()).unwrap_err();
        assert!(
            matches!(err, Error::Invalid { ref field, .. } if field == "user_labels"),
            "{err}"
        );
    }

    #[test]
    fn missing_files_and_nan_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(Error::Io { .. })));
        let d = toy(2, 2, 2, 1, 2);
        save_bundle(&d, dir.path()).unwrap();
        let mut vals = d.trials().to_vec();
        vals[2] = f32::INFINITY;
        write_f32(&dir.path().join(TRIALS_FILE), &vals).unwrap();
        let err = load_bundle(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Invalid { ref field, .. } if field == TRIALS_FILE));
    }
}
