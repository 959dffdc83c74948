//! Fixed-dimension comparison pipelines: resample to the model's rate, fill
//! missing sensors, and the copy-imputed augmented training set.

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{Classifier, Evaluation, ModelSpec};
use crate::signal::{NormStats, TimeWindow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Imputation {
    /// Missing streams take the training-set means.
    Mean,
    /// Missing sensor blocks cycle through the present ones.
    Copy,
    /// No filling; missing sensors leave the window too narrow.
    None,
}

impl Imputation {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mean => "mean",
            Self::Copy => "copy",
            Self::None => "none",
        }
    }
}

/// Wraps a fixed-dimension model with resampling and imputation.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselinePipeline {
    pub rate_hz: f64,
    /// Sensors the model was built for.
    pub sensors: Vec<usize>,
    pub imputation: Imputation,
    pub spec: ModelSpec,
    /// Training-set statistics; required by mean imputation.
    pub stats: Option<NormStats>,
}

impl BaselinePipeline {
    pub fn new(
        rate_hz: f64,
        sensors: Vec<usize>,
        imputation: Imputation,
        spec: ModelSpec,
        stats: Option<NormStats>,
    ) -> Result<Self> {
        if spec.adaptive {
            return Err(Error::config("baseline pipelines wrap fixed-dimension models only"));
        }
        if imputation == Imputation::Mean && stats.is_none() {
            return Err(Error::config("mean imputation needs training statistics"));
        }
        if sensors.len() * spec.axes_per_sensor != spec.input.streams {
            return Err(Error::config(format!(
                "{} sensors do not give the model's {} streams",
                sensors.len(),
                spec.input.streams
            )));
        }
        Ok(BaselinePipeline {
            rate_hz,
            sensors,
            imputation,
            spec,
            stats,
        })
    }

    /// Brings a window to the model's build dimensions, or fails with a
    /// dimension error.
    pub fn preprocess(&self, window: &TimeWindow) -> Result<TimeWindow> {
        let resampled = if window.rate_hz() == self.rate_hz {
            window.clone()
        } else {
            window.resample(self.rate_hz)?
        };
        let filled = match self.imputation {
            Imputation::Mean => resampled.impute_mean(&self.sensors, self.stats.as_ref().expect("checked"))?,
            Imputation::Copy => resampled.impute_copy(&self.sensors)?,
            Imputation::None => resampled,
        };
        let want = (self.spec.input.samples, self.spec.input.streams);
        if (filled.samples(), filled.streams()) != want {
            return Err(Error::dim(
                "baseline",
                format!(
                    "preprocessed window is {}x{}, model takes {}x{}",
                    filled.samples(),
                    filled.streams(),
                    want.0,
                    want.1
                ),
            ));
        }
        Ok(filled)
    }

    pub fn evaluate(&self, model: &Classifier, windows: &[&TimeWindow]) -> Result<Evaluation> {
        let prepared = windows
            .iter()
            .map(|w| self.preprocess(w))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&TimeWindow> = prepared.iter().collect();
        model.evaluate(&refs)
    }
}

/// Non-empty proper subsets of `0..sensors` in lexicographic order.
pub fn proper_subsets(sensors: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = (1..(1usize << sensors) - 1)
        .map(|bits| (0..sensors).filter(|s| bits >> s & 1 == 1).collect())
        .collect();
    out.sort();
    out
}

/// Adds, after each window, one copy-imputed variant per non-empty proper
/// sensor subset, giving `2^s - 1` windows per original.
pub fn augment_dataset(dataset: &LabeledDataset, sensors: usize) -> Result<LabeledDataset> {
    if sensors < 2 {
        return Err(Error::config("augmentation needs at least two sensors"));
    }
    let full: Vec<usize> = (0..sensors).collect();
    let subsets = proper_subsets(sensors);
    let mut windows = Vec::with_capacity(dataset.len() << sensors);
    for w in &dataset.windows {
        if w.sensors() != full {
            return Err(Error::config("augmentation expects windows with every sensor"));
        }
        windows.push(w.clone());
        for subset in &subsets {
            windows.push(w.select_sensors(subset)?.impute_copy(&full)?);
        }
    }
    LabeledDataset::new(dataset.split.clone(), windows)
}
