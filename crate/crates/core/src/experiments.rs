//! Experiment configuration, rate/sensor sweeps and the results table.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselinePipeline, Imputation};
use crate::dataset::{read_info, read_split, DatasetInfo, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{Classifier, Evaluation, ModelSpec};
use crate::signal::{NormStats, TimeWindow};
use crate::synth::{generate_dataset, SyntheticConfig};
use crate::training::TrainConfig;

pub const CSV_HEADER: &str = "rate_hz,sensors,model,trainer,accuracy,loss,seed";

/// Where the windows come from: a dataset directory, or the synthetic
/// generator when no directory is given.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub rates: Vec<f64>,
    /// Sensor subsets; empty means every sensor, then each single sensor.
    pub subsets: Vec<Vec<usize>>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            rates: vec![10.0, 20.0, 30.0, 40.0, 50.0],
            subsets: Vec::new(),
        }
    }
}

impl SweepGrid {
    pub fn resolved_subsets(&self, sensors: usize) -> Vec<Vec<usize>> {
        if !self.subsets.is_empty() {
            return self.subsets.clone();
        }
        let mut out = vec![(0..sensors).collect::<Vec<_>>()];
        if sensors > 1 {
            out.extend((0..sensors).map(|s| vec![s]));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub imputation: Imputation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub overwrite: bool,
    pub data: DataConfig,
    /// Model preset name.
    pub model: String,
    pub train: TrainConfig,
    pub sweep: SweepGrid,
    /// Pipeline for fixed-dimension models in sweeps.
    pub baseline: Option<BaselineConfig>,
    /// Checkpoint for `sweep` and `eval`; defaults to `<out>/checkpoint`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            out: PathBuf::from("runs/default"),
            overwrite: false,
            data: DataConfig::default(),
            model: "toy-dana".into(),
            train: TrainConfig::default(),
            sweep: SweepGrid::default(),
            baseline: None,
            checkpoint: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Propagates the experiment seed to data generation, initialization and training.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.data.synthetic.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out.join("checkpoint"))
    }

    pub fn validate(&self, info: &DatasetInfo) -> Result<()> {
        ModelSpec::preset(&self.model, info.classes(), info.streams)?.validate()?;
        let min_rate = self.train.rates.iter().copied().fold(f64::INFINITY, f64::min);
        if let Some(&r) = self
            .sweep
            .rates
            .iter()
            .find(|&&r| r < min_rate - 1e-9 || r > info.rate_hz + 1e-9)
        {
            return Err(Error::config(format!(
                "sweep rate {r} Hz outside [{min_rate}, {}] Hz",
                info.rate_hz
            )));
        }
        Ok(())
    }
}

/// Train and test splits with their manifest.
#[derive(Clone, Debug)]
pub struct LoadedData {
    pub info: DatasetInfo,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

pub fn load_data(cfg: &DataConfig) -> Result<LoadedData> {
    match &cfg.dir {
        Some(dir) => {
            let info = read_info(dir)?;
            Ok(LoadedData {
                train: read_split(dir, &info, "train")?,
                test: read_split(dir, &info, "test")?,
                info,
            })
        }
        None => {
            let d = generate_dataset(&cfg.synthetic)?;
            Ok(LoadedData {
                info: d.info,
                train: d.train,
                test: d.test,
            })
        }
    }
}

/// Builds the preset the config names for this dataset's classes and streams.
pub fn model_spec(cfg: &ExperimentConfig, info: &DatasetInfo) -> Result<ModelSpec> {
    let mut spec = ModelSpec::preset(&cfg.model, info.classes(), info.streams)?;
    spec.input.streams = info.streams;
    spec.input.samples = info.samples;
    spec.axes_per_sensor = info.axes_per_sensor;
    spec.validate()?;
    Ok(spec)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rate_hz: f64,
    pub sensors: Vec<usize>,
    pub model: String,
    pub trainer: String,
    /// NaN for a cell the model could not evaluate.
    pub accuracy: f64,
    pub loss: f64,
    pub per_class: Vec<f64>,
    pub seed: u64,
}

impl SweepRow {
    pub fn failed(&self) -> bool {
        self.accuracy.is_nan()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub cells: usize,
    pub failures: usize,
    pub min_accuracy: f64,
    pub mean_accuracy: f64,
    pub max_accuracy: f64,
}

/// Evaluates `model` at every `(rate, subset)` cell of `grid`. Fixed-dimension
/// models go through `pipeline` when one is given; cells a model cannot
/// take become failure rows.
pub fn sweep(
    model: &Classifier,
    pipeline: Option<&BaselinePipeline>,
    test: &LabeledDataset,
    grid: &SweepGrid,
    trainer: &str,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let sensors = test
        .windows
        .first()
        .ok_or_else(|| Error::config("empty test set"))?
        .sensors()
        .len();
    let mut rows = Vec::new();
    for &rate in &grid.rates {
        let resampled: Vec<TimeWindow> = test
            .windows
            .iter()
            .map(|w| w.resample(rate))
            .collect::<Result<_>>()?;
        for subset in grid.resolved_subsets(sensors) {
            let windows: Vec<TimeWindow> = resampled
                .iter()
                .map(|w| w.select_sensors(&subset))
                .collect::<Result<_>>()?;
            let refs: Vec<&TimeWindow> = windows.iter().collect();
            let result = match pipeline {
                Some(p) => p.evaluate(model, &refs),
                None => model.evaluate(&refs),
            };
            let model_id = match pipeline {
                Some(p) => format!("{}+{}", model.spec.name, p.imputation.name()),
                None => model.spec.name.clone(),
            };
            let (accuracy, loss, per_class) = match result {
                Ok(Evaluation {
                    accuracy,
                    loss,
                    per_class,
                    ..
                }) => (
                    accuracy,
                    loss,
                    per_class
                        .iter()
                        .map(|&(c, t)| if t == 0 { f64::NAN } else { c as f64 / t as f64 })
                        .collect(),
                ),
                Err(Error::Dimension { .. } | Error::UnsupportedDimensions(_)) => {
                    (f64::NAN, f64::NAN, Vec::new())
                }
                Err(e) => return Err(e),
            };
            rows.push(SweepRow {
                rate_hz: rate,
                sensors: subset,
                model: model_id,
                trainer: trainer.to_string(),
                accuracy,
                loss,
                per_class,
                seed,
            });
        }
    }
    Ok(rows)
}

pub fn summarize(rows: &[SweepRow]) -> SweepSummary {
    let ok: Vec<f64> = rows.iter().filter(|r| !r.failed()).map(|r| r.accuracy).collect();
    let n = ok.len();
    SweepSummary {
        cells: rows.len(),
        failures: rows.len() - n,
        min_accuracy: ok.iter().copied().fold(f64::NAN, f64::min),
        mean_accuracy: if n == 0 { f64::NAN } else { ok.iter().sum::<f64>() / n as f64 },
        max_accuracy: ok.iter().copied().fold(f64::NAN, f64::max),
    }
}

/// `%.9g`-style rendering: nine significant digits, trailing zeros trimmed.
pub fn format_sig9(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn sensors_label(sensors: &[usize]) -> String {
    sensors.iter().map(usize::to_string).collect::<Vec<_>>().join("+")
}

pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            format_sig9(r.rate_hz),
            sensors_label(&r.sensors),
            r.model,
            r.trainer,
            format_sig9(r.accuracy),
            format_sig9(r.loss),
            r.seed
        )
        .expect("string write");
    }
    out
}

/// Native-rate training-set statistics used by mean imputation.
pub fn training_stats(train: &LabeledDataset) -> Result<NormStats> {
    NormStats::from_windows(&train.windows)
}

/// Pipeline for a fixed-dimension model at the dataset's native dimensions.
pub fn baseline_pipeline(spec: &ModelSpec, info: &DatasetInfo, imputation: Imputation, stats: Option<NormStats>) -> Result<BaselinePipeline> {
    BaselinePipeline::new(info.rate_hz, (0..info.sensors()).collect(), imputation, spec.clone(), stats)
}
