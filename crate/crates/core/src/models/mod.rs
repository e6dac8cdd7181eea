//! Compact convolutional classifiers for task and user identification, and
//! the shared supervised training loop.

mod adam;
mod arch;
mod layers;
mod loss;
mod network;
mod persist;
mod train;

pub use adam::Adam;
pub use arch::{ArchitectureSpec, Family, Hyper, ARCHITECTURE_VERSION};
pub use loss::{ce_loss, ce_loss_grad};
pub use network::{argmax_label, build, Classifier};
pub use persist::{load_classifier, save_classifier};
pub use train::{
    evaluate, predict, predict_dataset, train, train_with_hooks, trials_f64, BatchHook,
    TrainConfig, TrainedClassifier,
};
