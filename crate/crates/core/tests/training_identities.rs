mod common;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use common::random_windows;
use dana::autodiff::Gradients;
use dana::dataset::LabeledDataset;
use dana::nn::{build_model, Classifier, ModelSpec, ParameterSet};
use dana::signal::TimeWindow;
use dana::synth::{generate_dataset, SyntheticConfig};
use dana::training::{
    apply_dimensions, batch_gradients, dat_accumulate, dat_round, dense_gradients, fit, optimizer_step, reptile_round,
    standard_round, weight_avg_round, OptimizerConfig, OptimizerState, SensorPolicy, TrainConfig, TrainState,
    TrainerKind,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn batches(windows: &[TimeWindow], size: usize) -> Vec<Vec<&TimeWindow>> {
    windows.chunks(size).map(|c| c.iter().collect()).collect()
}

fn max_param_diff(a: &ParameterSet, b: &ParameterSet) -> f64 {
    a.tensors()
        .iter()
        .zip(b.tensors())
        .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

fn digest(p: &ParameterSet) -> u64 {
    let mut h = DefaultHasher::new();
    p.to_le_bytes().hash(&mut h);
    h.finish()
}

fn sgd_config(trainer: TrainerKind, rates: Vec<f64>, b: usize) -> TrainConfig {
    TrainConfig {
        trainer,
        batches_per_round: b,
        rates,
        optimizer: OptimizerConfig::sgd(1.0),
        ..TrainConfig::default()
    }
}

#[test]
fn round_gradient_is_the_sum_of_batch_gradients() {
    let spec = ModelSpec::toy_adaptive(5);
    let params = build_model(&spec, 3).unwrap();
    let ws = random_windows(32, 50, 5, 1);
    let bs = batches(&ws, 8);
    let cfg = TrainConfig::default();
    let policy = SensorPolicy::half_all_half_single(2);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (sum, outcome) = dat_accumulate(&spec, &params, &bs, &cfg, &policy, &mut rng).unwrap();
    assert_eq!(outcome.dimensions.len(), 4);
    let mut expected = Gradients::default();
    for (batch, dims) in bs.iter().zip(&outcome.dimensions) {
        let transformed = apply_dimensions(batch, dims).unwrap();
        let g = batch_gradients(&spec, &params, &transformed, &mut rng).unwrap();
        expected.add(&g.gradients).unwrap();
    }
    assert_eq!(sum.len(), params.len());
    assert!(sum.max_abs_diff(&expected) < 1e-12);
}

#[test]
fn single_batch_single_rate_dat_is_standard() {
    let spec = ModelSpec::toy_adaptive(5);
    let ws = random_windows(8, 50, 5, 2);
    let bs = batches(&ws, 8);
    let policy = SensorPolicy::all(2);
    let cfg = TrainConfig {
        optimizer: OptimizerConfig::sgd(0.1),
        ..sgd_config(TrainerKind::Dat, vec![50.0], 1)
    };
    let start = TrainState::new(build_model(&spec, 4).unwrap());
    let (mut a, mut b) = (start.clone(), start);
    dat_round(&mut a, &spec, &bs, &cfg, &policy, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    standard_round(&mut b, &spec, &bs[0], &cfg, &policy, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(a.params, b.params);
}

#[test]
fn all_four_trainers_coincide_at_one_batch() {
    let spec = ModelSpec::toy_adaptive(5);
    let ws = random_windows(8, 50, 5, 3);
    let bs = batches(&ws, 8);
    let policy = SensorPolicy::half_all_half_single(2);
    let start = TrainState::new(build_model(&spec, 5).unwrap());
    let cfg = sgd_config(TrainerKind::Dat, vec![10.0, 20.0, 30.0, 40.0, 50.0], 1);
    let rng = || ChaCha8Rng::seed_from_u64(77);
    let mut dat = start.clone();
    dat_round(&mut dat, &spec, &bs, &cfg, &policy, &mut rng()).unwrap();
    let mut std = start.clone();
    standard_round(&mut std, &spec, &bs[0], &cfg, &policy, &mut rng()).unwrap();
    let mut avg = start.clone();
    weight_avg_round(&mut avg, &spec, &bs, &cfg, &policy, &mut rng()).unwrap();
    let mut rep = start.clone();
    reptile_round(&mut rep, &spec, &bs, &cfg, &policy, &mut rng()).unwrap();
    assert_eq!(dat.params, std.params);
    assert_eq!(avg.params, std.params);
    assert!(max_param_diff(&rep.params, &avg.params) < 1e-12);
    assert!(max_param_diff(&dat.params, &start.params) > 1e-6);
}

#[test]
fn weight_averaging_matches_independent_copies() {
    let spec = ModelSpec::toy_adaptive(5);
    let ws = random_windows(40, 50, 5, 4);
    let bs = batches(&ws, 8);
    let policy = SensorPolicy::half_all_half_single(2);
    let cfg = TrainConfig {
        optimizer: OptimizerConfig::default(),
        ..sgd_config(TrainerKind::WeightAvg, vec![10.0, 20.0, 30.0, 40.0, 50.0], 5)
    };
    let start = TrainState::new(build_model(&spec, 6).unwrap());
    let mut state = start.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let outcome = weight_avg_round(&mut state, &spec, &bs, &cfg, &policy, &mut rng).unwrap();

    let mut copies = Vec::new();
    let mut states = Vec::new();
    for (batch, dims) in bs.iter().zip(&outcome.dimensions) {
        let mut p = start.params.clone();
        let mut s = OptimizerState::new(&p);
        let transformed = apply_dimensions(batch, dims).unwrap();
        let g = batch_gradients(&spec, &p, &transformed, &mut rng).unwrap();
        let dense = dense_gradients(&g.gradients, &p);
        optimizer_step(&cfg.optimizer, &mut s, &mut p, &dense);
        copies.push(p);
        states.push(s);
    }
    let mut rates: Vec<f64> = outcome.dimensions.iter().map(|d| d.rate_hz).collect();
    rates.sort_by(f64::total_cmp);
    assert_eq!(rates, cfg.rates);
    let mean = ParameterSet::mean_of(&copies).unwrap();
    assert!(max_param_diff(&state.params, &mean) < 1e-12);
    let avg = OptimizerState::average(&states);
    for (a, b) in state.optimizer.first.iter().zip(&avg.first) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() < 1e-15));
    }
}

#[test]
fn one_epoch_lowers_the_loss() {
    let data = generate_dataset(&SyntheticConfig {
        train_per_class: 60,
        test_per_class: 20,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let model = Classifier::build(ModelSpec::toy_adaptive(5), 1).unwrap();
    let before = model.evaluate(&data.train.refs()).unwrap().loss;
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 10,
        optimizer: OptimizerConfig {
            learning_rate: 5e-3,
            ..OptimizerConfig::default()
        },
        ..TrainConfig::default()
    };
    let (trained, report) = fit(model, &data.train, &data.test, &cfg).unwrap();
    let after = trained.evaluate(&data.train.refs()).unwrap().loss;
    assert_eq!(report.epochs.len(), 1);
    assert_eq!(report.optimizer_steps, 6);
    assert!(after < before, "{after} >= {before}");
}

#[test]
fn runs_are_reproducible_and_trainers_differ() {
    let ws = random_windows(40, 50, 5, 5);
    let train = LabeledDataset::new("train", ws[..30].to_vec()).unwrap();
    let val = LabeledDataset::new("test", ws[30..].to_vec()).unwrap();
    let run = |trainer| {
        let cfg = TrainConfig {
            trainer,
            epochs: 2,
            batch_size: 5,
            seed: 11,
            ..TrainConfig::default()
        };
        let model = Classifier::build(ModelSpec::toy_adaptive(5), 2).unwrap();
        fit(model, &train, &val, &cfg).unwrap()
    };
    let (a, ra) = run(TrainerKind::Dat);
    let (b, rb) = run(TrainerKind::Dat);
    assert_eq!(digest(&a.params), digest(&b.params));
    assert_eq!(ra.without_timings(), rb.without_timings());
    let digests: Vec<u64> = [TrainerKind::Dat, TrainerKind::Standard, TrainerKind::WeightAvg, TrainerKind::Reptile]
        .into_iter()
        .map(|t| digest(&run(t).0.params))
        .collect();
    for i in 0..4 {
        for j in i + 1..4 {
            assert_ne!(digests[i], digests[j], "trainers {i} and {j}");
        }
    }
}
