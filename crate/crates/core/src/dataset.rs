//! Labelled window collections and the on-disk dataset directory:
//! `manifest.json`, then per split a `<split>.f64` file of row-major
//! little-endian windows laid end to end and a `<split>.labels` file of
//! little-endian `i32` class ids.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::checkpoint::read_f64s;
use crate::signal::TimeWindow;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub split: String,
    pub windows: Vec<TimeWindow>,
}

impl LabeledDataset {
    pub fn new(split: impl Into<String>, windows: Vec<TimeWindow>) -> Result<Self> {
        if let Some(k) = windows.iter().position(|w| w.label().is_none()) {
            return Err(Error::config(format!("window {k} has no label")));
        }
        Ok(LabeledDataset {
            split: split.into(),
            windows,
        })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn refs(&self) -> Vec<&TimeWindow> {
        self.windows.iter().collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.windows.iter().map(|w| w.label().expect("checked")).collect()
    }

    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for y in self.labels() {
            if y < classes {
                counts[y] += 1;
            }
        }
        counts
    }
}

/// Dataset manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub schema_version: u32,
    pub samples: usize,
    pub streams: usize,
    pub rate_hz: f64,
    pub duration_s: f64,
    pub axes_per_sensor: usize,
    pub sensor_names: Vec<String>,
    pub class_names: Vec<String>,
    /// Windows per split.
    pub counts: BTreeMap<String, usize>,
    pub seed: u64,
    #[serde(default)]
    pub generator: serde_json::Value,
    #[serde(default)]
    pub statistics: serde_json::Value,
}

impl DatasetInfo {
    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn sensors(&self) -> usize {
        self.sensor_names.len()
    }

    fn check_window(&self, w: &TimeWindow) -> Result<()> {
        let full: Vec<usize> = (0..self.sensors()).collect();
        if w.samples() != self.samples || w.streams() != self.streams || w.sensors() != full {
            return Err(Error::dim(
                "dataset",
                format!(
                    "window {}x{} does not match the {}x{} full-sensor layout",
                    w.samples(),
                    w.streams(),
                    self.samples,
                    self.streams
                ),
            ));
        }
        if w.label().is_none_or(|y| y >= self.classes()) {
            return Err(Error::config("window label missing or outside the class list"));
        }
        Ok(())
    }
}

/// Writes a dataset directory. A non-empty `dir` is refused unless
/// `overwrite` is set.
pub fn write_dataset(dir: &Path, info: &DatasetInfo, splits: &[&LabeledDataset], overwrite: bool) -> Result<()> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() && !overwrite {
        return Err(Error::config(format!(
            "{} exists and is not empty; pass the overwrite flag to replace it",
            dir.display()
        )));
    }
    let mut info = info.clone();
    info.counts = splits.iter().map(|s| (s.split.clone(), s.len())).collect();
    for split in splits {
        for w in &split.windows {
            info.check_window(w)?;
        }
    }
    fs::create_dir_all(dir)?;
    for split in splits {
        let mut values = Vec::with_capacity(split.len() * info.samples * info.streams * 8);
        let mut labels = Vec::with_capacity(split.len() * 4);
        for w in &split.windows {
            for x in w.data() {
                values.extend_from_slice(&x.to_le_bytes());
            }
            labels.extend_from_slice(&(w.label().expect("checked") as i32).to_le_bytes());
        }
        fs::write(dir.join(format!("{}.f64", split.split)), values)?;
        fs::write(dir.join(format!("{}.labels", split.split)), labels)?;
    }
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&info)? + "\n")?;
    Ok(())
}

pub fn read_info(dir: &Path) -> Result<DatasetInfo> {
    let path = dir.join(MANIFEST);
    let info: DatasetInfo = serde_json::from_slice(&fs::read(&path)?)?;
    if info.schema_version != SCHEMA_VERSION {
        return Err(Error::Format {
            path: path.display().to_string(),
            detail: format!("unsupported schema version {}", info.schema_version),
        });
    }
    if info.streams != info.axes_per_sensor * info.sensors() {
        return Err(Error::Format {
            path: path.display().to_string(),
            detail: "stream count does not match sensors x axes".into(),
        });
    }
    Ok(info)
}

/// Loads one split of a dataset directory.
pub fn read_split(dir: &Path, info: &DatasetInfo, split: &str) -> Result<LabeledDataset> {
    let count = *info
        .counts
        .get(split)
        .ok_or_else(|| Error::config(format!("dataset has no {split:?} split")))?;
    let values_path = dir.join(format!("{split}.f64"));
    let labels_path = dir.join(format!("{split}.labels"));
    let format_err = |path: &Path, detail: String| Error::Format {
        path: path.display().to_string(),
        detail,
    };
    let per_window = info.samples * info.streams;
    let values = read_f64s(&fs::read(&values_path)?)
        .filter(|v| v.len() == count * per_window)
        .ok_or_else(|| format_err(&values_path, format!("expected {count} windows of {per_window} values")))?;
    let label_bytes = fs::read(&labels_path)?;
    if label_bytes.len() != count * 4 {
        return Err(format_err(&labels_path, format!("expected {count} labels")));
    }
    let sensors: Vec<usize> = (0..info.sensors()).collect();
    let mut windows = Vec::with_capacity(count);
    for (k, raw) in label_bytes.chunks_exact(4).enumerate() {
        let y = i32::from_le_bytes(raw.try_into().expect("4 bytes"));
        if y < 0 || y as usize >= info.classes() {
            return Err(format_err(&labels_path, format!("label {y} at {k} outside the class list")));
        }
        let w = TimeWindow::with_duration(
            values[k * per_window..(k + 1) * per_window].to_vec(),
            info.samples,
            info.rate_hz,
            info.duration_s,
            sensors.clone(),
            info.axes_per_sensor,
        )?;
        windows.push(w.labeled(y as usize));
    }
    LabeledDataset::new(split, windows)
}
