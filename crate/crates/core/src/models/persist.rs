//! Classifier persistence: `model_meta.json` + `params.f32`.
//!
//! `params.f32` is the flat parameter vector as little-endian float32 in
//! layer order. Convolution weights are laid out `[out, in / groups, kernel]`
//! followed by the bias (when present); dense weights are `[out, in]`
//! followed by the bias. Parameters are rounded to single precision on save.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::arch::{ArchitectureSpec, ARCHITECTURE_VERSION};
use super::network::Classifier;
use super::train::TrainedClassifier;
use crate::dataio::bundle::{ensure_dir, read_f32, read_json, write_f32, write_json};
use crate::dataio::Target;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelMeta {
    format_version: u32,
    architecture_version: u32,
    spec: ArchitectureSpec,
    target: Target,
    input_scale: f64,
    n_params: usize,
    history: Vec<f64>,
}

pub fn save_classifier(model: &TrainedClassifier, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    ensure_dir(dir)?;
    let c = &model.classifier;
    let meta = ModelMeta {
        format_version: 1,
        architecture_version: ARCHITECTURE_VERSION,
        spec: c.spec().clone(),
        target: model.target,
        input_scale: c.input_scale(),
        n_params: c.n_params(),
        history: model.history.clone(),
    };
    write_json(&dir.join("model_meta.json"), &meta)?;
    let params: Vec<f32> = c.params().iter().map(|&v| v as f32).collect();
    write_f32(&dir.join("params.f32"), &params)
}

pub fn load_classifier(dir: impl AsRef<Path>) -> Result<TrainedClassifier> {
    let dir = dir.as_ref();
    let meta: ModelMeta = read_json(&dir.join("model_meta.json"))?;
    if meta.architecture_version != ARCHITECTURE_VERSION {
        return Err(Error::invalid(
            "architecture_version",
            format!("unsupported version {}", meta.architecture_version),
        ));
    }
    let params: Vec<f64> = read_f32(&dir.join("params.f32"))?
        .into_iter()
        .map(f64::from)
        .collect();
    if params.len() != meta.n_params {
        return Err(Error::Shape {
            field: "params.f32".into(),
            expected: meta.n_params,
            found: params.len(),
        });
    }
    Ok(TrainedClassifier {
        classifier: Classifier::from_parts(meta.spec, params, meta.input_scale)?,
        target: meta.target,
        history: meta.history,
    })
}
