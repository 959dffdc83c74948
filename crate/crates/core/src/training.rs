//! Trainers: dimension-adaptive training (DAT), plain per-batch training and
//! the two copy-averaging baselines, plus optimizers and the epoch loop.

use std::time::Instant;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{argmax, forward_on_tape, windows_to_batch, Classifier, ModelSpec, ParameterSet};
use crate::signal::TimeWindow;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerKind {
    Dat,
    Standard,
    WeightAvg,
    Reptile,
}

impl TrainerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Dat => "dat",
            Self::Standard => "standard",
            Self::WeightAvg => "weight_avg",
            Self::Reptile => "reptile",
        }
    }

    /// Whether the trainer groups `B` batches into one round.
    pub fn uses_rounds(self) -> bool {
        self != Self::Standard
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Plain gradient descent.
    Sgd,
    Adam,
    RmsProp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub rms_decay: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            rms_decay: 0.9,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            ..Self::default()
        }
    }
}

/// Moment accumulators mirroring a [`ParameterSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(params: &ParameterSet) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        OptimizerState {
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// Elementwise mean of the moments; the step counter of the first state.
    pub fn average(states: &[OptimizerState]) -> OptimizerState {
        let mut acc = states[0].clone();
        for s in &states[1..] {
            for (a, b) in acc.first.iter_mut().zip(&s.first) {
                a.add_assign(b).expect("same layout");
            }
            for (a, b) in acc.second.iter_mut().zip(&s.second) {
                a.add_assign(b).expect("same layout");
            }
        }
        let k = 1.0 / states.len() as f64;
        for t in acc.first.iter_mut().chain(acc.second.iter_mut()) {
            t.scale(k);
        }
        acc
    }
}

/// Applies one update with `grads` (one dense tensor per parameter).
pub fn optimizer_step(cfg: &OptimizerConfig, state: &mut OptimizerState, params: &mut ParameterSet, grads: &[Tensor]) {
    state.step += 1;
    let lr = cfg.learning_rate;
    let t = state.step as i32;
    for (k, p) in params.tensors_mut().iter_mut().enumerate() {
        let g = grads[k].data();
        let p = p.data_mut();
        match cfg.kind {
            OptimizerKind::Sgd => {
                for (x, gi) in p.iter_mut().zip(g) {
                    *x -= lr * gi;
                }
            }
            OptimizerKind::Adam => {
                let m = state.first[k].data_mut();
                let v = state.second[k].data_mut();
                let c1 = 1.0 - cfg.beta1.powi(t);
                let c2 = 1.0 - cfg.beta2.powi(t);
                for i in 0..p.len() {
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                    p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.epsilon);
                }
            }
            OptimizerKind::RmsProp => {
                let v = state.second[k].data_mut();
                for i in 0..p.len() {
                    v[i] = cfg.rms_decay * v[i] + (1.0 - cfg.rms_decay) * g[i] * g[i];
                    p[i] -= lr * g[i] / (v[i].sqrt() + cfg.epsilon);
                }
            }
        }
    }
}

/// One candidate sensor subset and its draw probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetWeight {
    pub sensors: Vec<usize>,
    pub probability: f64,
}

/// Probability table over non-empty sensor subsets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorPolicy {
    pub subsets: Vec<SubsetWeight>,
}

impl SensorPolicy {
    /// Always every sensor.
    pub fn all(sensors: usize) -> Self {
        SensorPolicy {
            subsets: vec![SubsetWeight {
                sensors: (0..sensors).collect(),
                probability: 1.0,
            }],
        }
    }

    /// Half the time every sensor, otherwise one sensor chosen uniformly.
    pub fn half_all_half_single(sensors: usize) -> Self {
        if sensors <= 1 {
            return Self::all(sensors);
        }
        let mut subsets = vec![SubsetWeight {
            sensors: (0..sensors).collect(),
            probability: 0.5,
        }];
        for s in 0..sensors {
            subsets.push(SubsetWeight {
                sensors: vec![s],
                probability: 0.5 / sensors as f64,
            });
        }
        SensorPolicy { subsets }
    }

    pub fn validate(&self, sensors: usize) -> Result<()> {
        let mut total = 0.0;
        for s in &self.subsets {
            if s.sensors.is_empty()
                || s.sensors.windows(2).any(|p| p[0] >= p[1])
                || s.sensors.iter().any(|&x| x >= sensors)
            {
                return Err(Error::config(format!(
                    "sensor subset {:?} must be non-empty, ascending and below {sensors}",
                    s.sensors
                )));
            }
            if !(s.probability >= 0.0) {
                return Err(Error::config("subset probabilities must be non-negative"));
            }
            total += s.probability;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("subset probabilities sum to {total}, not 1")));
        }
        Ok(())
    }

    /// Draws one subset; always consumes exactly one uniform variate.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &[usize] {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for s in &self.subsets {
            acc += s.probability;
            if u < acc {
                return &s.sensors;
            }
        }
        &self.subsets.last().expect("validated").sensors
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub trainer: TrainerKind,
    pub epochs: usize,
    pub batch_size: usize,
    /// Batches per optimization round (`B`); ignored by the standard trainer.
    pub batches_per_round: usize,
    /// Feasible sampling rates in Hz.
    pub rates: Vec<f64>,
    /// Defaults to [`SensorPolicy::half_all_half_single`].
    pub sensor_policy: Option<SensorPolicy>,
    pub optimizer: OptimizerConfig,
    /// Optimizer of the copies in the Reptile trainer; defaults to `optimizer`.
    pub inner_optimizer: Option<OptimizerConfig>,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            trainer: TrainerKind::Dat,
            epochs: 100,
            batch_size: 32,
            batches_per_round: 5,
            rates: vec![10.0, 20.0, 30.0, 40.0, 50.0],
            sensor_policy: None,
            optimizer: OptimizerConfig::default(),
            inner_optimizer: None,
            patience: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn policy(&self, sensors: usize) -> SensorPolicy {
        self.sensor_policy
            .clone()
            .unwrap_or_else(|| SensorPolicy::half_all_half_single(sensors))
    }

    pub fn inner(&self) -> OptimizerConfig {
        self.inner_optimizer.unwrap_or(self.optimizer)
    }

    /// Batches per round the trainer actually uses.
    pub fn round_size(&self) -> usize {
        if self.trainer.uses_rounds() {
            self.batches_per_round
        } else {
            1
        }
    }

    pub fn validate(&self, native_rate_hz: f64, sensors: usize) -> Result<()> {
        if self.batch_size == 0 || self.batches_per_round == 0 {
            return Err(Error::config("batch size and batches per round must be positive"));
        }
        if self.rates.is_empty() {
            return Err(Error::config("the feasible rate set is empty"));
        }
        if let Some(&r) = self.rates.iter().find(|&&r| !(r > 0.0) || r > native_rate_hz + 1e-9) {
            return Err(Error::config(format!(
                "rate {r} Hz outside (0, {native_rate_hz}] Hz"
            )));
        }
        if self.round_size() > self.rates.len() {
            return Err(Error::config(format!(
                "{} batches per round cannot draw distinct rates from {} feasible rates",
                self.batches_per_round,
                self.rates.len()
            )));
        }
        self.policy(sensors).validate(sensors)
    }
}

/// Sampling rate and sensor subset applied to one batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dimensions {
    pub rate_hz: f64,
    pub sensors: Vec<usize>,
}

/// Draws `count` distinct rates from `rates`.
pub fn draw_round_rates<R: Rng + ?Sized>(rates: &[f64], count: usize, rng: &mut R) -> Result<Vec<f64>> {
    if count > rates.len() {
        return Err(Error::config(format!(
            "cannot draw {count} distinct rates from {}",
            rates.len()
        )));
    }
    Ok(sample(rng, rates.len(), count).iter().map(|i| rates[i]).collect())
}

/// Resamples and masks every window of a batch identically.
pub fn apply_dimensions(batch: &[&TimeWindow], dims: &Dimensions) -> Result<Vec<TimeWindow>> {
    batch
        .iter()
        .map(|w| w.resample(dims.rate_hz)?.select_sensors(&dims.sensors))
        .collect()
}

/// Draws a rate from `rates` and a subset from `policy`, and applies them to
/// the whole batch.
pub fn dimension_randomization<R: Rng + ?Sized>(
    batch: &[&TimeWindow],
    rates: &[f64],
    policy: &SensorPolicy,
    rng: &mut R,
) -> Result<(Vec<TimeWindow>, Dimensions)> {
    let rate = draw_round_rates(rates, 1, rng)?[0];
    randomize_with_rate(batch, rate, policy, rng)
}

fn randomize_with_rate<R: Rng + ?Sized>(
    batch: &[&TimeWindow],
    rate_hz: f64,
    policy: &SensorPolicy,
    rng: &mut R,
) -> Result<(Vec<TimeWindow>, Dimensions)> {
    let dims = Dimensions {
        rate_hz,
        sensors: policy.sample(rng).to_vec(),
    };
    Ok((apply_dimensions(batch, &dims)?, dims))
}

/// Loss and gradients of one batch.
#[derive(Clone, Debug)]
pub struct BatchResult {
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
    pub gradients: Gradients,
}

fn labels_of(batch: &[TimeWindow]) -> Result<Vec<usize>> {
    batch
        .iter()
        .map(|w| w.label().ok_or_else(|| Error::config("training windows need labels")))
        .collect()
}

/// Forward and backward pass of one batch on `tape`; gradients are added to
/// the tape's accumulator.
fn accumulate_batch<R: Rng + ?Sized>(
    tape: &mut Tape,
    spec: &ModelSpec,
    params: &ParameterSet,
    batch: &[TimeWindow],
    rng: &mut R,
) -> Result<(f64, usize)> {
    let labels = labels_of(batch)?;
    let refs: Vec<&TimeWindow> = batch.iter().collect();
    let input = windows_to_batch(&refs)?;
    let logits = forward_on_tape(tape, spec, params, &input, Some(rng))?;
    let correct = tape
        .value(logits)
        .data()
        .chunks(spec.classes)
        .zip(&labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    let loss = tape.softmax_cross_entropy(logits, &labels)?;
    let value = tape.value(loss).data()[0];
    tape.backward(loss)?;
    Ok((value, correct))
}

/// Mean-over-batch loss gradients of one (already transformed) batch.
pub fn batch_gradients<R: Rng + ?Sized>(
    spec: &ModelSpec,
    params: &ParameterSet,
    batch: &[TimeWindow],
    rng: &mut R,
) -> Result<BatchResult> {
    let mut tape = Tape::new();
    let (loss, correct) = accumulate_batch(&mut tape, spec, params, batch, rng)?;
    Ok(BatchResult {
        loss,
        correct,
        count: batch.len(),
        gradients: tape.accumulate_and_reset(),
    })
}

/// One dense gradient per parameter; parameters without a gradient get zeros.
pub fn dense_gradients(grads: &Gradients, params: &ParameterSet) -> Vec<Tensor> {
    params
        .tensors()
        .iter()
        .enumerate()
        .map(|(k, t)| grads.get(k).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect()
}

/// Parameters plus optimizer state carried between rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ParameterSet,
    pub optimizer: OptimizerState,
    /// State of the copies' optimizer (Reptile only).
    pub inner: OptimizerState,
}

impl TrainState {
    pub fn new(params: ParameterSet) -> Self {
        let optimizer = OptimizerState::new(&params);
        TrainState {
            inner: optimizer.clone(),
            optimizer,
            params,
        }
    }
}

/// Summary of one round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundOutcome {
    /// Mean of the per-batch losses.
    pub loss: f64,
    pub correct: usize,
    pub seen: usize,
    pub dimensions: Vec<Dimensions>,
}

/// Randomizes each batch (distinct rates within the round) and sums the
/// per-batch gradients, all at the current parameters.
pub fn dat_accumulate<R: Rng + ?Sized>(
    spec: &ModelSpec,
    params: &ParameterSet,
    batches: &[Vec<&TimeWindow>],
    config: &TrainConfig,
    policy: &SensorPolicy,
    rng: &mut R,
) -> Result<(Gradients, RoundOutcome)> {
    let rates = draw_round_rates(&config.rates, batches.len(), rng)?;
    let mut tape = Tape::new();
    let mut outcome = RoundOutcome {
        loss: 0.0,
        correct: 0,
        seen: 0,
        dimensions: Vec::with_capacity(batches.len()),
    };
    for (batch, &rate) in batches.iter().zip(&rates) {
        let (windows, dims) = randomize_with_rate(batch, rate, policy, rng)?;
        let (loss, correct) = accumulate_batch(&mut tape, spec, params, &windows, rng)?;
        outcome.loss += loss;
        outcome.correct += correct;
        outcome.seen += windows.len();
        outcome.dimensions.push(dims);
    }
    outcome.loss /= batches.len() as f64;
    Ok((tape.accumulate_and_reset(), outcome))
}

/// One DAT round: the summed gradient of `B` randomized batches, divided by
/// `B`, drives a single optimizer step.
pub fn dat_round<R: Rng + ?Sized>(
    state: &mut TrainState,
    spec: &ModelSpec,
    batches: &[Vec<&TimeWindow>],
    config: &TrainConfig,
    policy: &SensorPolicy,
    rng: &mut R,
) -> Result<RoundOutcome> {
    let (mut grads, outcome) = dat_accumulate(spec, &state.params, batches, config, policy, rng)?;
    grads.scale(1.0 / batches.len() as f64);
    let dense = dense_gradients(&grads, &state.params);
    optimizer_step(&config.optimizer, &mut state.optimizer, &mut state.params, &dense);
    Ok(outcome)
}

/// One randomized batch, one gradient, one optimizer step.
pub fn standard_round<R: Rng + ?Sized>(
    state: &mut TrainState,
    spec: &ModelSpec,
    batch: &[&TimeWindow],
    config: &TrainConfig,
    policy: &SensorPolicy,
    rng: &mut R,
) -> Result<RoundOutcome> {
    let rate = draw_round_rates(&config.rates, 1, rng)?[0];
    copy_step_at(
        &mut state.params,
        &mut state.optimizer,
        &config.optimizer,
        spec,
        batch,
        rate,
        policy,
        rng,
    )
}

#[allow(clippy::too_many_arguments)]
fn copy_step_at<R: Rng + ?Sized>(
    params: &mut ParameterSet,
    opt: &mut OptimizerState,
    opt_cfg: &OptimizerConfig,
    spec: &ModelSpec,
    batch: &[&TimeWindow],
    rate: f64,
    policy: &SensorPolicy,
    rng: &mut R,
) -> Result<RoundOutcome> {
    let (windows, dims) = randomize_with_rate(batch, rate, policy, rng)?;
    let res = batch_gradients(spec, params, &windows, rng)?;
    let dense = dense_gradients(&res.gradients, params);
    optimizer_step(opt_cfg, opt, params, &dense);
    Ok(RoundOutcome {
        loss: res.loss,
        correct: res.correct,
        seen: res.count,
        dimensions: vec![dims],
    })
}

/// `B` copies each take one step on their own randomized batch; returns the
/// updated copies and their optimizer states.
#[allow(clippy::too_many_arguments)]
fn update_copies<R: Rng + ?Sized>(
    params: &ParameterSet,
    opt: &OptimizerState,
    opt_cfg: &OptimizerConfig,
    spec: &ModelSpec,
    batches: &[Vec<&TimeWindow>],
    config: &TrainConfig,
    policy: &SensorPolicy,
    rng: &mut R,
) -> Result<(Vec<ParameterSet>, Vec<OptimizerState>, RoundOutcome)> {
    let rates = draw_round_rates(&config.rates, batches.len(), rng)?;
    let mut copies = Vec::with_capacity(batches.len());
    let mut states = Vec::with_capacity(batches.len());
    let mut total = RoundOutcome {
        loss: 0.0,
        correct: 0,
        seen: 0,
        dimensions: Vec::new(),
    };
    for (batch, &rate) in batches.iter().zip(&rates) {
        let mut p = params.clone();
        let mut s = opt.clone();
        let o = copy_step_at(&mut p, &mut s, opt_cfg, spec, batch, rate, policy, rng)?;
        total.loss += o.loss;
        total.correct += o.correct;
        total.seen += o.seen;
        total.dimensions.extend(o.dimensions);
        copies.push(p);
        states.push(s);
    }
    total.loss /= batches.len() as f64;
    Ok((copies, states, total))
}

/// Parameters and optimizer moments become the mean of `B` independently
/// updated copies.
pub fn weight_avg_round<R: Rng + ?Sized>(
    state: &mut TrainState,
    spec: &ModelSpec,
    batches: &[Vec<&TimeWindow>],
    config: &TrainConfig,
    policy: &SensorPolicy,
    rng: &mut R,
) -> Result<RoundOutcome> {
    let (copies, states, outcome) = update_copies(
        &state.params,
        &state.optimizer,
        &config.optimizer,
        spec,
        batches,
        config,
        policy,
        rng,
    )?;
    state.params = ParameterSet::mean_of(&copies)?;
    state.optimizer = OptimizerState::average(&states);
    Ok(outcome)
}

/// The displacement from the current parameters to the mean of `B` updated
/// copies is fed to the optimizer in place of a loss gradient.
pub fn reptile_round<R: Rng + ?Sized>(
    state: &mut TrainState,
    spec: &ModelSpec,
    batches: &[Vec<&TimeWindow>],
    config: &TrainConfig,
    policy: &SensorPolicy,
    rng: &mut R,
) -> Result<RoundOutcome> {
    let inner_cfg = config.inner();
    let (copies, states, outcome) =
        update_copies(&state.params, &state.inner, &inner_cfg, spec, batches, config, policy, rng)?;
    let mean = ParameterSet::mean_of(&copies)?;
    state.inner = OptimizerState::average(&states);
    let pseudo: Vec<Tensor> = state
        .params
        .tensors()
        .iter()
        .zip(mean.tensors())
        .map(|(p, m)| {
            let data = p.data().iter().zip(m.data()).map(|(a, b)| a - b).collect();
            Tensor::new(p.shape().to_vec(), data).expect("same shape")
        })
        .collect();
    optimizer_step(&config.optimizer, &mut state.optimizer, &mut state.params, &pseudo);
    Ok(outcome)
}

/// Runs the configured trainer's round.
pub fn run_round<R: Rng + ?Sized>(
    state: &mut TrainState,
    spec: &ModelSpec,
    batches: &[Vec<&TimeWindow>],
    config: &TrainConfig,
    policy: &SensorPolicy,
    rng: &mut R,
) -> Result<RoundOutcome> {
    match config.trainer {
        TrainerKind::Dat => dat_round(state, spec, batches, config, policy, rng),
        TrainerKind::Standard => {
            let [batch] = batches else {
                return Err(Error::config("the standard trainer takes one batch per round"));
            };
            standard_round(state, spec, batch, config, policy, rng)
        }
        TrainerKind::WeightAvg => weight_avg_round(state, spec, batches, config, policy, rng),
        TrainerKind::Reptile => reptile_round(state, spec, batches, config, policy, rng),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub trainer: String,
    /// Mean per-round training loss.
    pub loss: f64,
    /// Accuracy on the randomized training batches.
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub trainer: String,
    pub model: String,
    pub parameter_count: usize,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub stopped_early: bool,
    pub optimizer_steps: u64,
}

impl TrainingReport {
    /// Copy with every wall-time field zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        let mut r = self.clone();
        for e in &mut r.epochs {
            e.seconds = 0.0;
        }
        r
    }
}

/// Trains `model` and returns the parameters with the best validation
/// accuracy (native rate, every sensor). Training stops once `patience`
/// epochs pass without a strict improvement.
pub fn fit(model: Classifier, train: &LabeledDataset, validation: &LabeledDataset, config: &TrainConfig) -> Result<(Classifier, TrainingReport)> {
    let first = train
        .windows
        .first()
        .ok_or_else(|| Error::config("empty training set"))?;
    let sensors = first.sensors().len();
    config.validate(first.rate_hz(), sensors)?;
    let policy = config.policy(sensors);
    let val_refs = validation.refs();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let Classifier { spec, params } = model;
    let mut state = TrainState::new(params);
    let mut best = state.params.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut records = Vec::with_capacity(config.epochs);
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let round = config.round_size();
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let batches: Vec<Vec<&TimeWindow>> = order
            .chunks(config.batch_size)
            .map(|c| c.iter().map(|&i| &train.windows[i]).collect())
            .collect();
        let (mut loss, mut rounds, mut correct, mut seen) = (0.0, 0usize, 0usize, 0usize);
        for group in batches.chunks(round) {
            let o = run_round(&mut state, &spec, group, config, &policy, &mut rng)?;
            loss += o.loss;
            rounds += 1;
            correct += o.correct;
            seen += o.seen;
        }
        let current = Classifier {
            spec: spec.clone(),
            params: state.params.clone(),
        };
        let eval = current.evaluate(&val_refs)?;
        records.push(EpochRecord {
            epoch,
            trainer: config.trainer.name().into(),
            loss: loss / rounds.max(1) as f64,
            train_accuracy: correct as f64 / seen.max(1) as f64,
            val_accuracy: eval.accuracy,
            val_loss: eval.loss,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::info!(
            "epoch {epoch} {} loss {:.4} val {:.4}",
            config.trainer.name(),
            loss / rounds.max(1) as f64,
            eval.accuracy
        );
        if eval.accuracy > best_acc {
            best_acc = eval.accuracy;
            best_epoch = epoch;
            best = state.params.clone();
        } else if epoch - best_epoch > config.patience {
            stopped_early = true;
            break;
        }
    }
    let parameter_count = best.count();
    let report = TrainingReport {
        trainer: config.trainer.name().into(),
        model: spec.name.clone(),
        parameter_count,
        epochs: records,
        best_epoch,
        best_val_accuracy: if best_epoch == 0 { 0.0 } else { best_acc },
        stopped_early,
        optimizer_steps: state.optimizer.step,
    };
    Ok((Classifier { spec, params: best }, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn windows(n: usize, seed: u64) -> Vec<TimeWindow> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|k| {
                let data = (0..50 * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
                TimeWindow::new(data, 50, 50.0, vec![0, 1], 3).unwrap().labeled(k % 5)
            })
            .collect()
    }

    #[test]
    fn round_rates_are_distinct() {
        let rates = [6.0, 12.0, 18.0, 25.0, 31.0, 37.0, 43.0, 50.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let mut got = draw_round_rates(&rates, 4, &mut rng).unwrap();
            got.sort_by(f64::total_cmp);
            got.dedup();
            assert_eq!(got.len(), 4);
        }
        assert!(draw_round_rates(&rates, 9, &mut rng).is_err());
    }

    #[test]
    fn singleton_rates_and_all_sensors_leave_batch_unchanged() {
        let ws = windows(3, 0);
        let refs: Vec<&TimeWindow> = ws.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, dims) = dimension_randomization(&refs, &[50.0], &SensorPolicy::all(2), &mut rng).unwrap();
        assert_eq!(out, ws);
        assert_eq!(dims.sensors, [0, 1]);
    }

    #[test]
    fn randomization_is_seeded() {
        let ws = windows(2, 0);
        let refs: Vec<&TimeWindow> = ws.iter().collect();
        let policy = SensorPolicy::half_all_half_single(2);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..10)
                .map(|_| dimension_randomization(&refs, &[10.0, 20.0, 50.0], &policy, &mut rng).unwrap().1)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn policy_frequencies() {
        let policy = SensorPolicy::half_all_half_single(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 20000;
        let all = (0..n).filter(|_| policy.sample(&mut rng).len() == 2).count();
        assert!((all as f64 / n as f64 - 0.5).abs() < 0.02);
        assert!(SensorPolicy { subsets: vec![] }.validate(2).is_err());
    }

    #[test]
    fn oversized_round_rejected() {
        let cfg = TrainConfig {
            batches_per_round: 6,
            ..TrainConfig::default()
        };
        assert!(cfg.validate(50.0, 2).is_err());
        let std = TrainConfig {
            trainer: TrainerKind::Standard,
            ..cfg
        };
        std.validate(50.0, 2).unwrap();
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let params = ParameterSet::new(vec!["w".into()], vec![Tensor::new(vec![2], vec![1.0, -1.0]).unwrap()]).unwrap();
        let mut p = params.clone();
        let mut s = OptimizerState::new(&p);
        let g = [Tensor::new(vec![2], vec![0.3, -7.0]).unwrap()];
        optimizer_step(&OptimizerConfig::default(), &mut s, &mut p, &g);
        assert!((p.tensor(0).data()[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p.tensor(0).data()[1] - (-1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn zero_pseudo_gradient_keeps_parameters() {
        let spec = ModelSpec::toy_adaptive(5);
        let model = Classifier::build(spec.clone(), 0).unwrap();
        let mut state = TrainState::new(model.params.clone());
        let cfg = TrainConfig {
            optimizer: OptimizerConfig::sgd(0.5),
            inner_optimizer: Some(OptimizerConfig::sgd(0.0)),
            ..TrainConfig::default()
        };
        let ws = windows(4, 1);
        let batches = vec![ws[..2].iter().collect(), ws[2..].iter().collect()];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        reptile_round(&mut state, &spec, &batches, &cfg, &SensorPolicy::all(2), &mut rng).unwrap();
        assert_eq!(state.params, model.params);
        assert_eq!(state.optimizer.step, 1);
    }

    #[test]
    fn patience_zero_stops_after_first_flat_epoch() {
        let spec = ModelSpec::toy_adaptive(5);
        let model = Classifier::build(spec, 0).unwrap();
        let train = LabeledDataset::new("train", windows(10, 2)).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            patience: 0,
            batch_size: 5,
            batches_per_round: 2,
            optimizer: OptimizerConfig::sgd(0.0),
            ..TrainConfig::default()
        };
        let (_, report) = fit(model, &train, &train, &cfg).unwrap();
        assert_eq!(report.epochs.len(), 2);
        assert!(report.stopped_early);
        assert_eq!(report.best_epoch, 1);
        assert_eq!(report.optimizer_steps, 2);
    }
}
