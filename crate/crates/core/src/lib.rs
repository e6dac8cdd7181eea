//! User-wise perturbations that make user identity unlearnable in multichannel
//! EEG training data, together with the machinery used to check that they
//! work: compact CNN classifiers, adversarial training, data transformations,
//! classical feature pipelines and balanced-accuracy scoring.
//!
//! The crate is organised by stage:
//!
//! * [`dataio`] holds the dataset model, bundle persistence and the synthetic generator.
//! * [`perturb`] generates RAND / SN / EMIN / EMAX perturbation sets.
//! * [`models`] contains the CNN families and the supervised training loop.
//! * [`robustness`] provides PGD, adversarial training and trial transforms.
//! * [`classic`] has wavelet / STFT / AR features with LDA and boosted trees.
//! * [`metrics`] scores predictions.
//! * [`experiment`] runs config-driven experiment matrices and writes reports.

pub mod classic;
pub mod dataio;
mod error;
pub mod experiment;
pub mod metrics;
pub mod models;
pub mod par;
pub mod perturb;
pub mod robustness;
pub mod seed;

pub use error::{Error, Result};
