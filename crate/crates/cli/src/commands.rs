use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use eegshield::dataio::{
    load_bundle, save_bundle, split_by_session, synth_generate, LabeledDataset, SplitSpec,
    SynthConfig, Target,
};
use eegshield::experiment::{
    parse_csv, plots_from_csv_rows, report_plots, rows_to_csv, run_experiment_with, score_cell,
    write_report, Cell, CellResult, Defense, ExperimentConfig, ExperimentReport, Learner, CLEAN,
    DEFAULT_EPSILONS,
};
use eegshield::models::{evaluate, load_classifier, save_classifier, Family};
use eegshield::perturb::{
    apply, generate as generate_set, load_perturbation, save_perturbation, AmplitudePreset, Method,
};
use eegshield::robustness::{load_montage, Transform};

/// Commands return `Ok(false)` when they finished but some cell failed.
type Outcome = Result<bool>;

fn sessions(list: &[u32]) -> BTreeSet<u32> {
    list.iter().copied().collect()
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Named preset: `reference` or `tiny`.
    #[arg(long, default_value = "reference")]
    preset: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_users: Option<usize>,
    #[arg(long)]
    trials_per_user_per_class: Option<usize>,
    #[arg(long)]
    user_signature_strength: Option<f64>,
    #[arg(long)]
    task_signature_strength: Option<f64>,
}

pub fn synth(a: &SynthArgs) -> Outcome {
    let mut cfg = SynthConfig::preset(&a.preset)?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.n_users {
        cfg.n_users = v;
    }
    if let Some(v) = a.trials_per_user_per_class {
        cfg.trials_per_user_per_class = v;
    }
    if let Some(v) = a.user_signature_strength {
        cfg.user_signature_strength = v;
    }
    if let Some(v) = a.task_signature_strength {
        cfg.task_signature_strength = v;
    }
    let d = synth_generate(&cfg)?;
    save_bundle(&d, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "wrote {} trials ({} users, {} classes, {}x{}) to {}",
        d.n_trials(),
        d.n_users(),
        d.n_classes(),
        d.n_channels(),
        d.n_samples(),
        a.out.display()
    );
    Ok(true)
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Amplitude multiplier of user std; defaults to the preset's value.
    #[arg(long)]
    alpha: Option<f64>,
    /// Amplitude preset used when `--alpha` is absent.
    #[arg(long, default_value = "mi")]
    preset: String,
    /// Dataset bundle to perturb.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output directory: perturbation bundle plus the perturbed training split.
    #[arg(long)]
    out: PathBuf,
    /// Sessions that form the training split (default: the first session).
    #[arg(long, value_delimiter = ',')]
    train_sessions: Vec<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    n_segments: Option<usize>,
    #[arg(long)]
    no_trans: bool,
    #[arg(long)]
    n_substitutes: Option<usize>,
    #[arg(long)]
    no_ensemble: bool,
    #[arg(long, value_parser = parse_family)]
    substitute_arch: Option<Family>,
    #[arg(long)]
    model_steps: Option<usize>,
    #[arg(long)]
    no_channel_variation: bool,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: eegshield::Error| e.to_string())
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: eegshield::Error| e.to_string())
}

fn parse_target(s: &str) -> Result<Target, String> {
    s.parse().map_err(|e: eegshield::Error| e.to_string())
}

fn parse_learner(s: &str) -> Result<Learner, String> {
    s.parse().map_err(|e: eegshield::Error| e.to_string())
}

fn parse_transform(s: &str) -> Result<Transform, String> {
    s.parse().map_err(|e: eegshield::Error| e.to_string())
}

fn train_split(data: &LabeledDataset, train_sessions: &[u32]) -> Result<LabeledDataset> {
    if train_sessions.is_empty() {
        return Ok(split_by_session(data, &SplitSpec::first_sessions(data, 1))?.0);
    }
    let train = sessions(train_sessions);
    let test: BTreeSet<u32> = data.sessions().difference(&train).copied().collect();
    Ok(split_by_session(
        data,
        &SplitSpec {
            train_sessions: train,
            test_sessions: test,
        },
    )?
    .0)
}

pub fn generate(a: &GenerateArgs) -> Outcome {
    let data = load_bundle(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let train = train_split(&data, &a.train_sessions)?;
    let alpha = match a.alpha {
        Some(v) => v,
        None => AmplitudePreset::named(&a.preset)?.get(a.method),
    };
    let mut noise = eegshield::perturb::NoiseOptConfig {
        seed: a.seed,
        ..Default::default()
    };
    if let Some(v) = a.epochs {
        noise.epochs = v;
    }
    if let Some(v) = a.learning_rate {
        noise.learning_rate = v;
    }
    if let Some(v) = a.n_segments {
        noise.n_segments = v;
    }
    if let Some(v) = a.n_substitutes {
        noise.n_substitutes = v;
    }
    if let Some(v) = a.substitute_arch {
        noise.substitute_arch = v;
    }
    if let Some(v) = a.model_steps {
        noise.model_steps = v;
    }
    noise.use_trans = !a.no_trans;
    noise.use_ensemble = !a.no_ensemble;
    let pset = generate_set(a.method, &train, alpha, &noise, !a.no_channel_variation)?;
    pset.check_amplitude()?;
    let perturbed = apply(&train, &pset)?;
    save_perturbation(&pset, &a.out)?;
    save_bundle(&perturbed, &a.out)?;
    println!(
        "{} perturbation for {} users, multiplier {alpha}, max |delta|/alpha {:.4}; wrote {}",
        a.method,
        pset.deltas.len(),
        pset.max_ratio(),
        a.out.display()
    );
    if let (Some(first), Some(last)) = (pset.history.first(), pset.history.last()) {
        println!(
            "objective: epoch 1 {first:.4}, epoch {} {last:.4}",
            pset.history.len()
        );
    }
    Ok(true)
}

/// Training data, its method label, and the clean test split.
struct TrainTest {
    train: LabeledDataset,
    method: String,
    test: LabeledDataset,
    dataset: String,
}

fn load_train_test(input: &Path, test: &Path, test_sessions: &[u32]) -> Result<TrainTest> {
    let train = load_bundle(input).with_context(|| format!("reading {}", input.display()))?;
    let method = match load_perturbation(input) {
        Ok(p) => p.method.to_string(),
        Err(_) => CLEAN.to_string(),
    };
    let full = load_bundle(test).with_context(|| format!("reading {}", test.display()))?;
    let wanted: BTreeSet<u32> = if test_sessions.is_empty() {
        full.sessions()
            .difference(&train.sessions())
            .copied()
            .collect()
    } else {
        sessions(test_sessions)
    };
    if wanted.is_empty() {
        bail!(
            "no test sessions: {} holds only training sessions; pass --test-sessions",
            test.display()
        );
    }
    let idx: Vec<usize> = (0..full.n_trials())
        .filter(|&i| wanted.contains(&full.session_ids()[i]))
        .collect();
    if idx.is_empty() {
        bail!("test bundle has no trials in sessions {wanted:?}");
    }
    let dataset = test.file_name().map_or_else(
        || test.display().to_string(),
        |f| f.to_string_lossy().into_owned(),
    );
    Ok(TrainTest {
        test: full.select(&idx)?,
        train,
        method,
        dataset,
    })
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_target, default_value = "uid")]
    target: Target,
    /// Model family (`eegnet`, `deepcnn`, `shallowcnn`) or classic pipeline (`ar+lda`).
    #[arg(long, value_parser = parse_learner, default_value = "eegnet")]
    model: Learner,
    /// Training bundle (e.g. the output of `generate`).
    #[arg(long = "in")]
    input: PathBuf,
    /// Bundle holding the clean test trials.
    #[arg(long)]
    test: PathBuf,
    /// Test sessions; default: sessions of `--test` absent from `--in`.
    #[arg(long, value_delimiter = ',')]
    test_sessions: Vec<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_parser = parse_transform, default_value = "none")]
    transform: Transform,
    /// Adversarial training radius (fraction of user std).
    #[arg(long)]
    at_epsilon: Option<f64>,
    #[arg(long)]
    pgd_steps: Option<usize>,
    #[arg(long)]
    montage: Option<PathBuf>,
    /// Save the trained CNN here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn base_config(epochs: Option<usize>, pgd_steps: Option<usize>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    if let Some(e) = epochs {
        cfg.train.epochs = e;
        cfg.train.decay_epoch = e / 2;
    }
    if let Some(s) = pgd_steps {
        cfg.pgd.n_steps = s;
    }
    cfg
}

fn print_row(dataset: &str, c: &CellResult) {
    println!(
        "{dataset},{},{},{},{},{},{},{}",
        c.method,
        c.model,
        c.target,
        c.defense,
        c.transform,
        c.repeat,
        c.bca.map_or_else(|| "NaN".into(), |b| format!("{b:.6}"))
    );
}

pub fn train(a: &TrainArgs) -> Outcome {
    let tt = load_train_test(&a.input, &a.test, &a.test_sessions)?;
    let montage = a.montage.as_ref().map(load_montage).transpose()?;
    let cfg = base_config(a.epochs, a.pgd_steps);
    let cell = Cell {
        learner: a.model,
        target: a.target,
        defense: a.at_epsilon.map_or(Defense::None, Defense::At),
        transform: a.transform,
    };
    let before = tt.test.checksum();
    let outcome = score_cell(&cfg, &cell, &tt.train, &tt.test, montage.as_ref(), a.seed)?;
    if tt.test.checksum() != before {
        bail!("test split changed during training");
    }
    println!("{}", eegshield::experiment::CSV_HEADER);
    print_row(
        &tt.dataset,
        &CellResult {
            method: tt.method,
            model: a.model.label(),
            target: a.target.as_str().into(),
            defense: cell.defense.label(),
            transform: a.transform.as_str().into(),
            repeat: 0,
            seed: a.seed,
            bca: Some(outcome.bca),
            error: None,
            test_intact: true,
        },
    );
    if let Some(dir) = &a.out {
        let model = outcome.model.context("classic pipelines are not saved")?;
        save_classifier(&model, dir).with_context(|| format!("writing {}", dir.display()))?;
    }
    Ok(true)
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory written by `train --out`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// Restrict to these sessions.
    #[arg(long, value_delimiter = ',')]
    sessions: Vec<u32>,
}

pub fn eval(a: &EvalArgs) -> Outcome {
    let model =
        load_classifier(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let mut data =
        load_bundle(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    if !a.sessions.is_empty() {
        let keep = sessions(&a.sessions);
        let idx: Vec<usize> = (0..data.n_trials())
            .filter(|&i| keep.contains(&data.session_ids()[i]))
            .collect();
        data = data.select(&idx)?;
    }
    let s = evaluate(&model, &data)?;
    println!(
        "target={} trials={} bca={:.6} rca={:.6} chance={:.6}",
        model.target.as_str(),
        data.n_trials(),
        s.bca,
        s.rca,
        s.chance
    );
    Ok(true)
}

#[derive(Debug, Args)]
pub struct RobustnessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, value_delimiter = ',')]
    test_sessions: Vec<u32>,
    #[arg(long, value_parser = parse_target, default_value = "uid")]
    target: Target,
    #[arg(long, value_parser = parse_family, default_value = "eegnet")]
    model: Family,
    /// AT radii; pass an empty list to skip adversarial training.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    epsilons: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_transform, default_value = "none")]
    transforms: Vec<Transform>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    pgd_steps: Option<usize>,
    #[arg(long)]
    montage: Option<PathBuf>,
    /// Write report.csv, report.json and plots/ here.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn robustness(a: &RobustnessArgs) -> Outcome {
    let tt = load_train_test(&a.input, &a.test, &a.test_sessions)?;
    let montage = a.montage.as_ref().map(load_montage).transpose()?;
    let cfg = base_config(a.epochs, a.pgd_steps);
    let defenses: Vec<Defense> = match &a.epsilons {
        Some(e) if e.is_empty() => vec![Defense::None],
        Some(e) => e.iter().map(|&v| Defense::At(v)).collect(),
        None => DEFAULT_EPSILONS.iter().map(|&v| Defense::At(v)).collect(),
    };
    let checksum = tt.test.checksum();
    let mut cells = Vec::new();
    println!("{}", eegshield::experiment::CSV_HEADER);
    for &transform in &a.transforms {
        for &defense in &defenses {
            let cell = Cell {
                learner: Learner::Cnn(a.model),
                target: a.target,
                defense,
                transform,
            };
            let outcome = score_cell(&cfg, &cell, &tt.train, &tt.test, montage.as_ref(), a.seed);
            let test_intact = tt.test.checksum() == checksum;
            let result = CellResult {
                method: tt.method.clone(),
                model: a.model.to_string(),
                target: a.target.as_str().into(),
                defense: defense.label(),
                transform: transform.as_str().into(),
                repeat: 0,
                seed: a.seed,
                bca: outcome.as_ref().ok().map(|o| o.bca),
                error: outcome.as_ref().err().map(ToString::to_string),
                test_intact,
            };
            print_row(&tt.dataset, &result);
            if let Some(e) = &result.error {
                eprintln!("cell failed: {e}");
            }
            cells.push(result);
        }
    }
    let report = ExperimentReport {
        dataset: tt.dataset,
        base_seed: a.seed,
        n_repeats: 1,
        test_checksum: checksum,
        perturbation_seeds: Default::default(),
        cells,
    };
    if let Some(dir) = &a.out {
        write_report(&report, dir)?;
        report_plots(&report, dir.join("plots"))?;
    }
    Ok(report.all_succeeded())
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Results directory holding report.csv.
    #[arg(long = "in")]
    input: PathBuf,
    /// Where to write SVGs (default: <in>/plots).
    #[arg(long)]
    plots: Option<PathBuf>,
}

pub fn report(a: &ReportArgs) -> Outcome {
    let path = a.input.join("report.csv");
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let rows = parse_csv(&text)?;
    let dir = a.plots.clone().unwrap_or_else(|| a.input.join("plots"));
    let written = plots_from_csv_rows(&rows, &dir)?;
    let summary: Vec<_> = rows
        .iter()
        .filter(|r| r.repeat == "mean" || r.repeat == "reduction")
        .cloned()
        .collect();
    print!("{}", rows_to_csv(&summary));
    eprintln!("wrote {} charts to {}", written.len(), dir.display());
    Ok(true)
}

pub fn run(a: &crate::RunArgs) -> Outcome {
    if a.print_default_config {
        print!("{}", ExperimentConfig::default().to_toml()?);
        return Ok(true);
    }
    let (mut cfg, base) = match &a.config {
        Some(p) => (
            ExperimentConfig::load(p)?,
            p.parent().map(Path::to_path_buf),
        ),
        None => bail!("--config is required"),
    };
    if let Some(n) = a.n_repeats {
        cfg.n_repeats = n;
    }
    if let Some(s) = a.base_seed {
        cfg.base_seed = s;
    }
    cfg.validate()?;
    let total = cfg.cells_per_repeat() * cfg.n_repeats;
    let mut done = 0usize;
    let report = run_experiment_with(&cfg, base.as_deref(), |c| {
        done += 1;
        let status = match (&c.bca, &c.error) {
            (Some(b), _) => format!("bca={b:.4}"),
            (None, Some(e)) => format!("FAILED: {e}"),
            (None, None) => "FAILED".into(),
        };
        eprintln!("[{done}/{total}] repeat {} {} {status}", c.repeat, c.id());
    })?;
    write_report(&report, &a.out)?;
    let plots = report_plots(&report, a.out.join("plots"))?;
    eprintln!(
        "wrote {} and {} charts",
        a.out.join("report.csv").display(),
        plots.len()
    );
    let failed = report.failures().count();
    if failed > 0 {
        eprintln!("{failed} of {} cells failed", report.cells.len());
    }
    Ok(failed == 0)
}
