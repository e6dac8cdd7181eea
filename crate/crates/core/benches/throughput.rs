//! Parallel vs single-threaded throughput of the hot paths: batched
//! forward passes, the perturbation objective, one training epoch and
//! classical feature extraction.

use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use eegshield::classic::{extract_dataset, FeatureKind, FeatureSpec};
use eegshield::dataio::{
    split_by_session, synth_generate, LabeledDataset, SplitSpec, SynthConfig, Target,
};
use eegshield::models::{
    build, evaluate, train, trials_f64, ArchitectureSpec, Family, TrainConfig,
};
use eegshield::par;
use eegshield::perturb::{noise_objective, ObjectiveBatch};

fn reference_train() -> LabeledDataset {
    let data = synth_generate(&SynthConfig::reference()).expect("reference dataset");
    split_by_session(&data, &SplitSpec::new([1], [2]))
        .expect("split")
        .0
}

/// Runs `f` once on the default pool and once pinned to a single thread.
fn both_modes(c: &mut Criterion, group: &str, mut f: impl FnMut() + Send) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("mode", "parallel"), |b| b.iter(&mut f));
    g.bench_function(BenchmarkId::new("mode", "sequential"), |b| {
        b.iter(|| par::sequential(&mut f))
    });
    g.finish();
}

fn forward(c: &mut Criterion) {
    let d = reference_train();
    let spec = ArchitectureSpec::new(Family::Eegnet, d.n_channels(), d.n_samples(), d.n_users());
    let model = build(&spec, 1).expect("model");
    let xs = trials_f64(&d, &(0..d.n_trials()).collect::<Vec<_>>());
    both_modes(c, "eegnet_forward_400_trials", || {
        black_box(model.batch_logits(&xs));
    });
}

fn objective(c: &mut Criterion) {
    let d = reference_train();
    let spec = ArchitectureSpec::new(Family::Eegnet, d.n_channels(), d.n_samples(), d.n_users());
    let model = build(&spec, 2).expect("model");
    let idx: Vec<usize> = (0..64).collect();
    let xs = trials_f64(&d, &idx);
    let users: Vec<u32> = idx.iter().map(|&i| d.user_labels()[i]).collect();
    let alphas: BTreeMap<u32, f64> = users.iter().map(|&u| (u, 0.3)).collect();
    let lambda: BTreeMap<u32, Vec<f64>> = alphas
        .keys()
        .map(|&u| (u, vec![0.1; d.trial_len()]))
        .collect();
    let batch = ObjectiveBatch {
        trials: &xs,
        users: &users,
        n_samples: d.n_samples(),
        shuffle: Some((8, 3)),
    };
    both_modes(c, "noise_objective_64_trials", || {
        black_box(noise_objective(&[&model], &batch, &lambda, &alphas).expect("objective"));
    });
}

fn training_epoch(c: &mut Criterion) {
    let d = reference_train();
    let spec = ArchitectureSpec::new(Family::Eegnet, d.n_channels(), d.n_samples(), d.n_users());
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::for_target(Target::Uid, 4)
    };
    both_modes(c, "eegnet_train_one_epoch", || {
        let m = train(&spec, &d, &cfg).expect("train");
        black_box(evaluate(&m, &d).expect("evaluate"));
    });
}

fn features(c: &mut Criterion) {
    let d = reference_train();
    for kind in [FeatureKind::Ar, FeatureKind::Wavelet, FeatureKind::Stft] {
        let spec = FeatureSpec {
            kind,
            ..FeatureSpec::default()
        };
        both_modes(c, &format!("features_{}", kind.as_str()), || {
            black_box(extract_dataset(&d, &spec).expect("features"));
        });
    }
}

criterion_group!(benches, forward, objective, training_epoch, features);
criterion_main!(benches);
