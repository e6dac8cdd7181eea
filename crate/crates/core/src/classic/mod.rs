//! Hand-crafted feature pipelines for user identification: wavelet-packet,
//! short-time Fourier and autoregressive features, classified by linear
//! discriminant analysis or gradient-boosted trees.

mod features;
mod gbt;
mod lda;

use serde::{Deserialize, Serialize};

pub use features::{extract, extract_dataset, FeatureKind, FeatureSpec, Wavelet, LOG_FLOOR};
pub use gbt::{gbt_fit, gbt_predict, GbtConfig, GbtModel};
pub use lda::{lda_fit, lda_predict, LdaModel};

use crate::dataio::{LabeledDataset, Target};
use crate::metrics::bca;
use crate::{Error, Result};

/// Relative ridge used when none is configured.
pub const DEFAULT_RIDGE: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ClassicModelSpec {
    Lda { ridge: f64 },
    Gbt(GbtConfig),
}

impl ClassicModelSpec {
    pub fn lda() -> Self {
        ClassicModelSpec::Lda {
            ridge: DEFAULT_RIDGE,
        }
    }

    pub fn gbt() -> Self {
        ClassicModelSpec::Gbt(GbtConfig::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            ClassicModelSpec::Lda { .. } => "lda",
            ClassicModelSpec::Gbt(_) => "gbt",
        }
    }
}

impl std::str::FromStr for ClassicModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lda" => Ok(Self::lda()),
            "gbt" => Ok(Self::gbt()),
            other => Err(Error::invalid(
                "classifier",
                format!("unknown classic model `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ClassicModel {
    Lda(LdaModel),
    Gbt(GbtModel),
}

impl ClassicModel {
    pub fn fit(spec: &ClassicModelSpec, features: &[Vec<f64>], labels: &[u32]) -> Result<Self> {
        match spec {
            ClassicModelSpec::Lda { ridge } => {
                lda_fit(features, labels, *ridge).map(ClassicModel::Lda)
            }
            ClassicModelSpec::Gbt(cfg) => gbt_fit(features, labels, cfg).map(ClassicModel::Gbt),
        }
    }

    pub fn predict(&self, features: &[Vec<f64>]) -> Result<Vec<u32>> {
        match self {
            ClassicModel::Lda(m) => lda_predict(m, features),
            ClassicModel::Gbt(m) => gbt_predict(m, features),
        }
    }
}

/// Extract, fit on `train`, predict `test`, and score balanced accuracy for
/// the chosen label space.
pub fn classic_eval(
    train: &LabeledDataset,
    test: &LabeledDataset,
    features: &FeatureSpec,
    model: &ClassicModelSpec,
    target: Target,
) -> Result<f64> {
    if train.n_channels() != test.n_channels() || train.n_samples() != test.n_samples() {
        return Err(Error::Geometry {
            channels: test.n_channels(),
            samples: test.n_samples(),
            message: format!(
                "train geometry is {}x{}",
                train.n_channels(),
                train.n_samples()
            ),
        });
    }
    let ftr = extract_dataset(train, features)?;
    let fte = extract_dataset(test, features)?;
    let fitted = ClassicModel::fit(model, &ftr, train.labels(target))?;
    Ok(bca(&fitted.predict(&fte)?, test.labels(target))?.bca)
}

/// [`classic_eval`] on user labels.
pub fn classic_uid_eval(
    train: &LabeledDataset,
    test: &LabeledDataset,
    features: &FeatureSpec,
    model: &ClassicModelSpec,
) -> Result<f64> {
    classic_eval(train, test, features, model, Target::Uid)
}
