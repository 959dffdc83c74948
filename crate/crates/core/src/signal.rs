//! Window-level signal transforms: resampling, sensor selection, imputation
//! and normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One multivariate sensor window: `samples x streams`, row-major.
///
/// Streams are grouped in blocks of `axes_per_sensor`, one block per entry of
/// `sensors` (the ids of the sensors present, in ascending order).
#[derive(Clone, Debug, PartialEq)]
pub struct TimeWindow {
    data: Vec<f64>,
    samples: usize,
    streams: usize,
    rate_hz: f64,
    duration_s: f64,
    sensors: Vec<usize>,
    axes_per_sensor: usize,
    label: Option<usize>,
}

impl TimeWindow {
    /// Builds a window whose duration is `samples / rate_hz`.
    pub fn new(
        data: Vec<f64>,
        samples: usize,
        rate_hz: f64,
        sensors: Vec<usize>,
        axes_per_sensor: usize,
    ) -> Result<Self> {
        if !(rate_hz > 0.0) {
            return Err(Error::config(format!("sampling rate must be positive, got {rate_hz}")));
        }
        Self::with_duration(data, samples, rate_hz, samples as f64 / rate_hz, sensors, axes_per_sensor)
    }

    pub fn with_duration(
        data: Vec<f64>,
        samples: usize,
        rate_hz: f64,
        duration_s: f64,
        sensors: Vec<usize>,
        axes_per_sensor: usize,
    ) -> Result<Self> {
        if axes_per_sensor == 0 {
            return Err(Error::config("axes_per_sensor must be positive"));
        }
        if sensors.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::InvalidSelection(format!(
                "sensor ids must be strictly ascending, got {sensors:?}"
            )));
        }
        let streams = axes_per_sensor * sensors.len();
        if samples * streams != data.len() {
            return Err(Error::dim(
                "time-window",
                format!(
                    "{samples} samples x {streams} streams need {} values, got {}",
                    samples * streams,
                    data.len()
                ),
            ));
        }
        if (rate_hz * duration_s).round() as usize != samples {
            return Err(Error::dim(
                "time-window",
                format!("{samples} samples inconsistent with {rate_hz} Hz over {duration_s} s"),
            ));
        }
        Ok(TimeWindow {
            data,
            samples,
            streams,
            rate_hz,
            duration_s,
            sensors,
            axes_per_sensor,
            label: None,
        })
    }

    pub fn labeled(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn streams(&self) -> usize {
        self.streams
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_s
    }

    pub fn sensors(&self) -> &[usize] {
        &self.sensors
    }

    pub fn axes_per_sensor(&self) -> usize {
        self.axes_per_sensor
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn get(&self, sample: usize, stream: usize) -> f64 {
        self.data[sample * self.streams + stream]
    }

    pub fn stream(&self, stream: usize) -> Vec<f64> {
        (0..self.samples).map(|i| self.get(i, stream)).collect()
    }

    fn rebuilt(&self, data: Vec<f64>, samples: usize, rate_hz: f64, sensors: Vec<usize>) -> TimeWindow {
        TimeWindow {
            streams: self.axes_per_sensor * sensors.len(),
            data,
            samples,
            rate_hz,
            duration_s: self.duration_s,
            sensors,
            axes_per_sensor: self.axes_per_sensor,
            label: self.label,
        }
    }

    /// Linear interpolation along time, per stream, on an endpoint-aligned grid.
    pub fn resample(&self, target_rate_hz: f64) -> Result<TimeWindow> {
        if self.samples < 2 {
            return Err(Error::TooShort {
                samples: self.samples,
            });
        }
        let target = (target_rate_hz * self.duration_s).round();
        if !(target >= 2.0) {
            return Err(Error::TooShort {
                samples: target.max(0.0) as usize,
            });
        }
        let target = target as usize;
        if target == self.samples {
            return Ok(self.rebuilt(self.data.clone(), target, target_rate_hz, self.sensors.clone()));
        }
        let (span, steps) = (self.samples - 1, target - 1);
        let mut out = Vec::with_capacity(target * self.streams);
        for j in 0..target {
            // position j * span / steps as an exact quotient plus remainder
            let num = j * span;
            let (idx, rem) = (num / steps, num % steps);
            let lo = &self.data[idx * self.streams..(idx + 1) * self.streams];
            if rem == 0 {
                out.extend_from_slice(lo);
            } else {
                let frac = rem as f64 / steps as f64;
                let hi = &self.data[(idx + 1) * self.streams..(idx + 2) * self.streams];
                out.extend(lo.iter().zip(hi).map(|(a, b)| a + frac * (b - a)));
            }
        }
        Ok(self.rebuilt(out, target, target_rate_hz, self.sensors.clone()))
    }

    /// Keeps the stream blocks of the sensors in `keep`, in their original order.
    pub fn select_sensors(&self, keep: &[usize]) -> Result<TimeWindow> {
        if keep.is_empty() {
            return Err(Error::InvalidSelection("no sensors kept".into()));
        }
        if let Some(missing) = keep.iter().find(|s| !self.sensors.contains(s)) {
            return Err(Error::InvalidSelection(format!(
                "sensor {missing} not present in {:?}",
                self.sensors
            )));
        }
        let blocks: Vec<usize> = (0..self.sensors.len())
            .filter(|&b| keep.contains(&self.sensors[b]))
            .collect();
        let sensors = blocks.iter().map(|&b| self.sensors[b]).collect();
        let mut out = Vec::with_capacity(self.samples * blocks.len() * self.axes_per_sensor);
        for i in 0..self.samples {
            let row = &self.data[i * self.streams..(i + 1) * self.streams];
            for &b in &blocks {
                out.extend_from_slice(&row[b * self.axes_per_sensor..(b + 1) * self.axes_per_sensor]);
            }
        }
        Ok(self.rebuilt(out, self.samples, self.rate_hz, sensors))
    }

    fn check_full_mask(&self, full_mask: &[usize]) -> Result<()> {
        if full_mask.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::InvalidSelection(format!(
                "full mask must be strictly ascending, got {full_mask:?}"
            )));
        }
        if let Some(extra) = self.sensors.iter().find(|s| !full_mask.contains(s)) {
            return Err(Error::InvalidSelection(format!(
                "sensor {extra} is not part of the full mask {full_mask:?}"
            )));
        }
        Ok(())
    }

    /// Rebuilds the full sensor layout, taking each block from `fill(position, sensor)`
    /// when the sensor is missing.
    fn fill_missing(&self, full_mask: &[usize], mut fill: impl FnMut(usize, usize, usize) -> Vec<f64>) -> TimeWindow {
        let axes = self.axes_per_sensor;
        let streams = axes * full_mask.len();
        let mut out = vec![0.0; self.samples * streams];
        let mut missing_seen = 0;
        for (pos, &sensor) in full_mask.iter().enumerate() {
            match self.sensors.iter().position(|&s| s == sensor) {
                Some(b) => {
                    for i in 0..self.samples {
                        let src = &self.data[i * self.streams + b * axes..][..axes];
                        out[i * streams + pos * axes..][..axes].copy_from_slice(src);
                    }
                }
                None => {
                    let block = fill(pos, sensor, missing_seen);
                    missing_seen += 1;
                    for i in 0..self.samples {
                        out[i * streams + pos * axes..][..axes]
                            .copy_from_slice(&block[i * axes..(i + 1) * axes]);
                    }
                }
            }
        }
        self.rebuilt(out, self.samples, self.rate_hz, full_mask.to_vec())
    }

    /// Fills missing sensors with the per-stream training means in `stats`,
    /// indexed by position within `full_mask`.
    pub fn impute_mean(&self, full_mask: &[usize], stats: &NormStats) -> Result<TimeWindow> {
        self.check_full_mask(full_mask)?;
        let needed = self.axes_per_sensor * full_mask.len();
        if stats.len() < needed {
            return Err(Error::config(format!(
                "statistics cover {} streams, the full mask needs {needed}",
                stats.len()
            )));
        }
        let axes = self.axes_per_sensor;
        let samples = self.samples;
        Ok(self.fill_missing(full_mask, |pos, _, _| {
            let means = &stats.mean[pos * axes..(pos + 1) * axes];
            (0..samples).flat_map(|_| means.iter().copied()).collect()
        }))
    }

    /// Fills missing sensors by cycling through the present sensor blocks in order.
    pub fn impute_copy(&self, full_mask: &[usize]) -> Result<TimeWindow> {
        self.check_full_mask(full_mask)?;
        if self.sensors.is_empty() {
            return Err(Error::InvalidSelection("no sensor present to copy from".into()));
        }
        let axes = self.axes_per_sensor;
        let present = self.sensors.len();
        Ok(self.fill_missing(full_mask, |_, _, k| {
            let b = k % present;
            (0..self.samples)
                .flat_map(|i| self.data[i * self.streams + b * axes..][..axes].iter().copied())
                .collect()
        }))
    }

    /// Per-stream `(x - mean) / std`.
    pub fn normalize(&self, stats: &NormStats) -> Result<TimeWindow> {
        if stats.len() != self.streams {
            return Err(Error::config(format!(
                "statistics cover {} streams, window has {}",
                stats.len(),
                self.streams
            )));
        }
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let s = k % self.streams;
                (x - stats.mean[s]) / stats.std[s]
            })
            .collect();
        Ok(self.rebuilt(data, self.samples, self.rate_hz, self.sensors.clone()))
    }
}

/// Per-stream mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl NormStats {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::config("mean and std lengths differ"));
        }
        if let Some((stream, &s)) = std.iter().enumerate().find(|(_, s)| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::DegenerateStats { stream, std: s });
        }
        Ok(NormStats { mean, std })
    }

    pub fn identity(streams: usize) -> Self {
        NormStats {
            mean: vec![0.0; streams],
            std: vec![1.0; streams],
        }
    }

    /// Population statistics over every sample of every window.
    pub fn from_windows(windows: &[TimeWindow]) -> Result<Self> {
        let first = windows
            .first()
            .ok_or_else(|| Error::config("cannot compute statistics of an empty set"))?;
        let streams = first.streams;
        let mut sum = vec![0.0; streams];
        let mut count = 0usize;
        for w in windows {
            if w.streams != streams {
                return Err(Error::dim("norm-stats", "windows disagree on stream count"));
            }
            for row in w.data.chunks_exact(streams) {
                for (s, x) in sum.iter_mut().zip(row) {
                    *s += x;
                }
            }
            count += w.samples;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; streams];
        for w in windows {
            for row in w.data.chunks_exact(streams) {
                for ((q, x), m) in sq.iter_mut().zip(row).zip(&mean) {
                    *q += (x - m) * (x - m);
                }
            }
        }
        let std = sq.iter().map(|q| (q / count as f64).sqrt()).collect();
        NormStats::new(mean, std)
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }
}
