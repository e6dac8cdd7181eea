use eegshield::dataio::{
    load_bundle, save_bundle, split_by_session, synth_generate, SplitSpec, SynthConfig, Target,
};
use eegshield::experiment::{
    parse_csv, read_report, report_csv, rows_to_csv, run_experiment, write_report, DataSource,
    ExperimentConfig,
};
use eegshield::models::{
    load_classifier, predict_dataset, save_classifier, train, ArchitectureSpec, Family, TrainConfig,
};
use eegshield::par;
use eegshield::perturb::{
    apply, gen_emin, load_perturbation, save_perturbation, Method, NoiseOptConfig,
};
use tempfile::TempDir;

fn tiny() -> eegshield::dataio::LabeledDataset {
    synth_generate(&SynthConfig::preset("tiny").unwrap()).unwrap()
}

fn quick_cfg() -> ExperimentConfig {
    ExperimentConfig {
        dataset: DataSource {
            preset: Some("tiny".into()),
            ..DataSource::default()
        },
        methods: vec![Method::Rand, Method::Emin],
        n_repeats: 2,
        train: TrainConfig {
            epochs: 2,
            decay_epoch: 1,
            ..TrainConfig::default()
        },
        noise: NoiseOptConfig {
            epochs: 2,
            ..NoiseOptConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

#[test]
fn perturbed_bundle_survives_disk_and_keeps_test_untouched() {
    let data = tiny();
    let (train_split, test_split) = split_by_session(&data, &SplitSpec::new([1], [2])).unwrap();
    let cfg = NoiseOptConfig {
        epochs: 3,
        seed: 9,
        ..NoiseOptConfig::default()
    };
    let pset = gen_emin(&train_split, 0.3, &cfg).unwrap();

    let dir = TempDir::new().unwrap();
    save_perturbation(&pset, dir.path().join("p")).unwrap();
    save_bundle(&data, dir.path().join("d")).unwrap();
    let pset2 = load_perturbation(dir.path().join("p")).unwrap();
    let data2 = load_bundle(dir.path().join("d")).unwrap();
    assert_eq!(pset, pset2);
    assert_eq!(data, data2);
    pset2.check_amplitude().unwrap();

    let perturbed = apply(&train_split, &pset2).unwrap();
    assert_ne!(perturbed.trials(), train_split.trials());
    assert_eq!(perturbed.user_labels(), train_split.user_labels());
    let (_, test_again) = split_by_session(&data2, &SplitSpec::new([1], [2])).unwrap();
    assert_eq!(test_again.checksum(), test_split.checksum());
}

#[test]
fn saved_model_predicts_identically() {
    let data = tiny();
    let spec = ArchitectureSpec::new(
        Family::Shallowcnn,
        data.n_channels(),
        data.n_samples(),
        data.n_users(),
    );
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::for_target(Target::Uid, 3)
    };
    let model = train(&spec, &data, &cfg).unwrap();
    let dir = TempDir::new().unwrap();
    save_classifier(&model, dir.path()).unwrap();
    let loaded = load_classifier(dir.path()).unwrap();
    assert_eq!(loaded.target, Target::Uid);
    // Params go through f32 on disk, so compare decisions rather than bits.
    assert_eq!(
        predict_dataset(&loaded.classifier, &data).unwrap(),
        predict_dataset(&model.classifier, &data).unwrap()
    );
}

#[test]
fn sequential_and_parallel_training_agree_bit_for_bit() {
    let data = tiny();
    let spec = ArchitectureSpec::new(
        Family::Eegnet,
        data.n_channels(),
        data.n_samples(),
        data.n_users(),
    );
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::for_target(Target::Uid, 5)
    };
    let a = train(&spec, &data, &cfg).unwrap();
    let b = par::sequential(|| train(&spec, &data, &cfg).unwrap());
    assert_eq!(a.classifier.params(), b.classifier.params());
    assert_eq!(a.history, b.history);
}

#[test]
fn experiment_report_round_trips_and_is_deterministic() {
    let cfg = quick_cfg();
    let first = run_experiment(&cfg).unwrap();
    assert!(first.all_succeeded());
    // clean + two methods, task and uid, two repeats.
    assert_eq!(first.cells.len(), 3 * 2 * 2);
    assert_eq!(run_experiment(&cfg).unwrap(), first);

    let dir = TempDir::new().unwrap();
    write_report(&first, dir.path()).unwrap();
    assert_eq!(read_report(dir.path()).unwrap(), first);
    let text = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(rows_to_csv(&parse_csv(&text).unwrap()), text);

    report_csv(&first, dir.path().join("again.csv")).unwrap();
    assert_eq!(
        std::fs::read_to_string(dir.path().join("again.csv")).unwrap(),
        text
    );
}

#[test]
fn changing_the_base_seed_changes_perturbations_not_the_test_split() {
    let a = run_experiment(&quick_cfg()).unwrap();
    let b = run_experiment(&ExperimentConfig {
        base_seed: 1,
        ..quick_cfg()
    })
    .unwrap();
    assert_eq!(a.test_checksum, b.test_checksum);
    assert_ne!(a.perturbation_seeds, b.perturbation_seeds);
}
