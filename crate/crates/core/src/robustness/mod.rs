//! Attacks, defences and data transformations used to stress-test
//! perturbed training sets.

mod laplacian;
mod pgd;
mod temporal;

pub use laplacian::{load_montage, save_montage, surface_laplacian, Montage};
pub use pgd::{
    adversarial_train, adversarial_train_with_hooks, pgd_attack, trial_radii, PgdConfig,
};
pub use temporal::{shift_by, temporal_recombination, temporal_shift, AugmentHook, Transform};
