use std::collections::BTreeMap;
use std::path::Path;

use super::config::{ClassicPipeline, Defense, ExperimentConfig};
use super::report::{cell_id, CellResult, ExperimentReport, CLEAN};
use crate::classic::classic_eval;
use crate::dataio::{split_by_session, LabeledDataset, SplitSpec, Target};
use crate::models::{
    evaluate, ArchitectureSpec, BatchHook, Family, TrainConfig, TrainedClassifier,
};
use crate::perturb::{apply, generate, Method, NoiseOptConfig, PerturbationSet};
use crate::robustness::{
    adversarial_train_with_hooks, load_montage, surface_laplacian, AugmentHook, Montage, PgdConfig,
    Transform,
};
use crate::{seed, Result};

/// Seed of one cell in one repeat: a hash of the base seed, the cell id
/// and the repeat index.
pub fn cell_seed(base_seed: u64, cell_id: &str, repeat: usize) -> u64 {
    seed::derive(base_seed, cell_id, repeat as u64)
}

/// Seed of the perturbation shared by every cell of `method` in one repeat.
pub fn perturbation_seed(base_seed: u64, method: Method, repeat: usize) -> u64 {
    seed::derive(base_seed, &format!("perturb/{method}"), repeat as u64)
}

/// The perturbation the runner generates for `method` in `repeat`.
pub fn perturbation_for(
    cfg: &ExperimentConfig,
    train: &LabeledDataset,
    method: Method,
    repeat: usize,
) -> Result<PerturbationSet> {
    let noise = NoiseOptConfig {
        seed: perturbation_seed(cfg.base_seed, method, repeat),
        ..cfg.noise.clone()
    };
    generate(
        method,
        train,
        cfg.multipliers()?.get(method),
        &noise,
        cfg.sn_channel_variation,
    )
}

/// The clean train split perturbed with `method` the way the runner does it.
pub fn perturbed_train(
    cfg: &ExperimentConfig,
    train: &LabeledDataset,
    method: Method,
    repeat: usize,
) -> Result<LabeledDataset> {
    apply(train, &perturbation_for(cfg, train, method, repeat)?)
}

/// Clean train and test splits for `cfg`.
pub fn load_splits(
    cfg: &ExperimentConfig,
    base_dir: Option<&Path>,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let data = cfg.dataset.load(base_dir)?;
    let split = cfg
        .split
        .clone()
        .unwrap_or_else(|| SplitSpec::first_sessions(&data, 1));
    split_by_session(&data, &split)
}

/// Run every cell of the matrix. Only loading the data can fail; a failing
/// cell is recorded with its error and the run moves on.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_with(cfg, None, |_| {})
}

/// As [`run_experiment`], resolving relative paths against `base_dir` and
/// calling `progress` after each cell.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    base_dir: Option<&Path>,
    mut progress: impl FnMut(&CellResult),
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (train, test) = load_splits(cfg, base_dir)?;
    let montage = match &cfg.montage {
        Some(p) => Some(load_montage(
            base_dir.map_or_else(|| p.clone(), |b| b.join(p)),
        )?),
        None => None,
    };
    let test_checksum = test.checksum();
    let cells_per_arm = cells_of(cfg);

    let mut arms: Vec<Option<Method>> = Vec::new();
    if cfg.include_clean {
        arms.push(None);
    }
    arms.extend(cfg.methods.iter().copied().map(Some));

    let mut cells = Vec::with_capacity(cfg.cells_per_repeat() * cfg.n_repeats);
    let mut perturbation_seeds: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for repeat in 0..cfg.n_repeats {
        for &arm in &arms {
            let method = arm.map_or(CLEAN, Method::as_str);
            let data = match arm {
                None => Ok(train.clone()),
                Some(m) => {
                    perturbation_seeds
                        .entry(m.to_string())
                        .or_default()
                        .push(perturbation_seed(cfg.base_seed, m, repeat));
                    perturbed_train(cfg, &train, m, repeat)
                }
            };
            for cell in &cells_per_arm {
                let model = cell.learner.label();
                let id = cell.id(method);
                let seed = cell_seed(cfg.base_seed, &id, repeat);
                let outcome = match &data {
                    Ok(d) => score_cell(cfg, cell, d, &test, montage.as_ref(), seed).map(|o| o.bca),
                    Err(e) => Err(crate::Error::invalid("perturbation", e.to_string())),
                };
                let test_intact = test.checksum() == test_checksum;
                let (bca, error) = match outcome {
                    Ok(b) => (Some(b), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                let error = match (error, test_intact) {
                    (e, true) => e,
                    (e, false) => {
                        Some(e.unwrap_or_default() + "; test split changed during the cell")
                    }
                };
                let result = CellResult {
                    method: method.into(),
                    model,
                    target: cell.target.as_str().into(),
                    defense: cell.defense.label(),
                    transform: cell.transform.as_str().into(),
                    repeat,
                    seed,
                    bca,
                    error,
                    test_intact,
                };
                progress(&result);
                cells.push(result);
            }
        }
    }
    Ok(ExperimentReport {
        dataset: cfg.dataset.label(),
        base_seed: cfg.base_seed,
        n_repeats: cfg.n_repeats,
        test_checksum,
        perturbation_seeds,
        cells,
    })
}

/// What a cell trains: a CNN family or a classical pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Learner {
    Cnn(Family),
    Classic(ClassicPipeline),
}

impl Learner {
    pub fn label(self) -> String {
        match self {
            Learner::Cnn(f) => f.to_string(),
            Learner::Classic(p) => p.label(),
        }
    }
}

impl std::str::FromStr for Learner {
    type Err = crate::Error;

    /// A family name (`eegnet`) or a pipeline (`ar+lda`).
    fn from_str(s: &str) -> Result<Self> {
        if s.contains('+') {
            s.parse().map(Learner::Classic)
        } else {
            s.parse().map(Learner::Cnn)
        }
    }
}

/// One configured cell, independent of method and repeat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub learner: Learner,
    pub target: Target,
    pub defense: Defense,
    pub transform: Transform,
}

impl Cell {
    /// Report identifier of this cell under arm `method` (`clean` or a method name).
    pub fn id(&self, method: &str) -> String {
        cell_id(
            method,
            &self.learner.label(),
            self.target.as_str(),
            &self.defense.label(),
            self.transform.as_str(),
        )
    }
}

/// Score of a cell, with the trained CNN when there is one.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub bca: f64,
    pub model: Option<TrainedClassifier>,
}

/// Train `cell` on `train` and score it on `test`, using the schedules,
/// PGD settings and transform parameters of `cfg`. `test` is never
/// modified; SL filters a copy.
pub fn score_cell(
    cfg: &ExperimentConfig,
    cell: &Cell,
    train: &LabeledDataset,
    test: &LabeledDataset,
    montage: Option<&Montage>,
    seed: u64,
) -> Result<CellOutcome> {
    let (train_x, test_x);
    let (train, test) = if cell.transform == Transform::Sl {
        train_x = surface_laplacian(train, montage)?;
        test_x = surface_laplacian(test, montage)?;
        (&train_x, &test_x)
    } else {
        (train, test)
    };
    match cell.learner {
        Learner::Classic(p) => {
            if cell.defense != Defense::None
                || !matches!(cell.transform, Transform::None | Transform::Sl)
            {
                return Err(crate::Error::invalid(
                    "classic",
                    "classical pipelines support only SL among defenses and transforms",
                ));
            }
            let bca = classic_eval(
                train,
                test,
                &cfg.classic_features(p),
                &cfg.classic_model(p),
                cell.target,
            )?;
            Ok(CellOutcome { bca, model: None })
        }
        Learner::Cnn(family) => {
            let arch = ArchitectureSpec::new(
                family,
                train.n_channels(),
                train.n_samples(),
                train.n_labels(cell.target),
            );
            let tc = TrainConfig {
                seed,
                target: cell.target,
                ..cfg.train.clone()
            };
            let t = train.n_samples();
            let hook = match cell.transform {
                Transform::Ts => Some(AugmentHook::Shift {
                    n_samples: t,
                    max_offset: cfg.ts_max_offset.unwrap_or(t / 4).min(t - 1),
                }),
                Transform::Tr => Some(AugmentHook::Recombine {
                    n_samples: t,
                    n_segments: cfg.tr_segments,
                }),
                Transform::None | Transform::Sl => None,
            };
            let hooks: Vec<&dyn BatchHook> = hook.iter().map(|h| h as &dyn BatchHook).collect();
            let epsilon = match cell.defense {
                Defense::None => 0.0,
                Defense::At(e) => e,
            };
            let pgd = PgdConfig {
                epsilon,
                ..cfg.pgd.clone()
            };
            let model = adversarial_train_with_hooks(&arch, train, &pgd, &tc, &hooks)?;
            let bca = evaluate(&model, test)?.bca;
            Ok(CellOutcome {
                bca,
                model: Some(model),
            })
        }
    }
}

/// Cells of one arm in report order.
fn cells_of(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &target in &cfg.targets {
        for &family in &cfg.families {
            for defense in cfg.defense_points() {
                for &transform in &cfg.transforms {
                    out.push(Cell {
                        learner: Learner::Cnn(family),
                        target,
                        defense,
                        transform,
                    });
                }
            }
        }
        for &p in &cfg.classic {
            out.push(Cell {
                learner: Learner::Classic(p),
                target,
                defense: Defense::None,
                transform: Transform::None,
            });
        }
    }
    out
}
