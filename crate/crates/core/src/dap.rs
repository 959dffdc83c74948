//! Dimension-adaptive pooling.
//!
//! Maps `M` feature maps of any `w' x h'` extent onto a fixed `W x H` grid per
//! map. When fewer streams than `H` arrive (missing sensors), each map is
//! first tiled along the streams axis `a = max(ceil((H - h') / axes), 0)`
//! times and truncated to `max(h', H)` streams. Cell `(i, j)` is then the
//! maximum over sample rows `[round(i w'/W), round((i+1) w'/W))` and stream
//! columns `[round(j h'/H), round((j+1) h'/H))` when nothing was replicated,
//! or `[j f, (j+1) f)` with `f = floor((a+1) h'/H)` otherwise. Rounding is
//! half-up on exact rationals.
//!
//! Replicated columns are never materialised: every window is stored as
//! offsets into the original map, so gradients flow straight back to the
//! source stream and a cell read through several copies collects all of
//! their contributions.

use serde::{Deserialize, Serialize};

use crate::autodiff::{PoolWindows, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_AXES_PER_SENSOR: usize = 3;

fn default_axes() -> usize {
    DEFAULT_AXES_PER_SENSOR
}

/// Output grid of the pooling layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DapParams {
    /// Output extent along the samples axis (`W`).
    pub width: usize,
    /// Output extent along the streams axis (`H`).
    pub height: usize,
    /// Streams contributed by one sensor; the replication unit.
    #[serde(default = "default_axes")]
    pub axes_per_sensor: usize,
}

impl DapParams {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::config(format!(
                "pooling grid must be at least 1x1, got {width}x{height}"
            )));
        }
        Ok(DapParams {
            width,
            height,
            axes_per_sensor: DEFAULT_AXES_PER_SENSOR,
        })
    }

    pub fn with_axes_per_sensor(mut self, axes: usize) -> Result<Self> {
        if axes == 0 {
            return Err(Error::config("axes_per_sensor must be positive"));
        }
        self.axes_per_sensor = axes;
        Ok(self)
    }
}

/// `M` maps of `samples x streams` values, row-major `(map, sample, stream)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMaps {
    maps: usize,
    samples: usize,
    streams: usize,
    data: Vec<f64>,
}

impl FeatureMaps {
    pub fn new(maps: usize, samples: usize, streams: usize, data: Vec<f64>) -> Result<Self> {
        if maps * samples * streams != data.len() {
            return Err(Error::dim(
                "feature-maps",
                format!(
                    "{maps}x{samples}x{streams} maps need {} values, got {}",
                    maps * samples * streams,
                    data.len()
                ),
            ));
        }
        Ok(FeatureMaps {
            maps,
            samples,
            streams,
            data,
        })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [m, w, h] => FeatureMaps::new(m, w, h, t.data().to_vec()),
            ref s => Err(Error::dim("feature-maps", format!("expected rank 3, got {s:?}"))),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.maps, self.samples, self.streams], self.data.clone())
            .expect("shape checked at construction")
    }

    pub fn maps(&self) -> usize {
        self.maps
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn streams(&self) -> usize {
        self.streams
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn map(&self, m: usize) -> &[f64] {
        let len = self.samples * self.streams;
        &self.data[m * len..(m + 1) * len]
    }

    pub fn get(&self, m: usize, sample: usize, stream: usize) -> f64 {
        self.data[(m * self.samples + sample) * self.streams + stream]
    }
}

fn round_ratio(num: usize, den: usize) -> usize {
    (2 * num + den) / (2 * den)
}

/// Pooling geometry for one input extent.
#[derive(Clone, Debug, PartialEq)]
pub struct DapPlan {
    params: DapParams,
    in_samples: usize,
    in_streams: usize,
    replications: usize,
    padded_streams: usize,
    rows: Vec<(usize, usize)>,
    cols: Vec<(usize, usize)>,
    windows: PoolWindows,
}

impl DapPlan {
    pub fn new(in_samples: usize, in_streams: usize, params: DapParams) -> Result<Self> {
        let DapParams {
            width,
            height,
            axes_per_sensor,
        } = params;
        if in_samples < width || in_samples == 0 {
            return Err(Error::UnsupportedDimensions(format!(
                "{in_samples} samples cannot be pooled onto {width} output rows"
            )));
        }
        if in_streams == 0 {
            return Err(Error::UnsupportedDimensions("no input streams".into()));
        }
        let replications = height.saturating_sub(in_streams).div_ceil(axes_per_sensor);
        let tiled = in_streams * (replications + 1);
        if tiled < height {
            return Err(Error::UnsupportedDimensions(format!(
                "{in_streams} streams replicated {replications} times cannot fill {height} output columns"
            )));
        }
        let padded_streams = tiled.min(in_streams.max(height));

        let rows: Vec<(usize, usize)> = (0..width)
            .map(|i| {
                let lo = round_ratio(i * in_samples, width);
                let hi = round_ratio((i + 1) * in_samples, width);
                (lo, hi.max(lo + 1))
            })
            .collect();
        let cols: Vec<(usize, usize)> = if replications == 0 {
            (0..height)
                .map(|j| {
                    let lo = round_ratio(j * in_streams, height);
                    let hi = round_ratio((j + 1) * in_streams, height);
                    (lo, hi.max(lo + 1))
                })
                .collect()
        } else {
            let step = (replications + 1) * in_streams / height;
            (0..height).map(|j| (j * step, (j + 1) * step)).collect()
        };
        if let Some(&(_, hi)) = rows.iter().find(|r| r.1 > in_samples) {
            return Err(Error::UnsupportedDimensions(format!(
                "sample window ends at {hi} beyond {in_samples} samples"
            )));
        }
        if let Some(&(_, hi)) = cols.iter().find(|c| c.1 > padded_streams) {
            return Err(Error::UnsupportedDimensions(format!(
                "stream window ends at {hi} beyond {padded_streams} replicated streams"
            )));
        }

        let mut cells = Vec::with_capacity(width * height);
        for &(r1, r2) in &rows {
            for &(c1, c2) in &cols {
                let mut cell = Vec::with_capacity((r2 - r1) * (c2 - c1));
                for r in r1..r2 {
                    for c in c1..c2 {
                        cell.push(r * in_streams + c % in_streams);
                    }
                }
                cells.push(cell);
            }
        }
        let windows = PoolWindows::new(in_samples * in_streams, cells)?;
        Ok(DapPlan {
            params,
            in_samples,
            in_streams,
            replications,
            padded_streams,
            rows,
            cols,
            windows,
        })
    }

    pub fn params(&self) -> DapParams {
        self.params
    }

    pub fn input_dims(&self) -> (usize, usize) {
        (self.in_samples, self.in_streams)
    }

    /// How many extra copies of each map were stacked along the streams axis (`a`).
    pub fn replications(&self) -> usize {
        self.replications
    }

    /// Stream count after tiling and truncation.
    pub fn padded_streams(&self) -> usize {
        self.padded_streams
    }

    /// Half-open sample range of output row `i`.
    pub fn row_window(&self, i: usize) -> (usize, usize) {
        self.rows[i]
    }

    /// Half-open range of output column `j` in replicated-stream coordinates.
    pub fn col_window(&self, j: usize) -> (usize, usize) {
        self.cols[j]
    }

    /// Original stream behind a replicated-stream column.
    pub fn source_stream(&self, column: usize) -> usize {
        column % self.in_streams
    }

    pub fn windows(&self) -> &PoolWindows {
        &self.windows
    }
}

/// Pooled maps plus the argmax routing needed to differentiate them.
#[derive(Clone, Debug, PartialEq)]
pub struct DapOutput {
    /// `(M, W, H)`.
    pub values: Tensor,
    /// Flat index into the input maps of every output cell's maximum.
    pub argmax: Vec<usize>,
}

pub fn dap_forward(fmaps: &FeatureMaps, params: DapParams) -> Result<DapOutput> {
    let plan = DapPlan::new(fmaps.samples, fmaps.streams, params)?;
    let (values, argmax) = plan.windows.apply(&fmaps.data)?;
    let values = Tensor::new(vec![fmaps.maps, params.width, params.height], values)?;
    Ok(DapOutput { values, argmax })
}

/// Routes each upstream value to the original coordinates of its window maximum.
pub fn dap_backward(fmaps: &FeatureMaps, routing: &DapOutput, upstream: &Tensor) -> Result<FeatureMaps> {
    if upstream.shape() != routing.values.shape() {
        return Err(Error::dim(
            "dap-backward",
            format!(
                "upstream {:?} vs pooled {:?}",
                upstream.shape(),
                routing.values.shape()
            ),
        ));
    }
    let mut grad = vec![0.0; fmaps.data.len()];
    for (&src, &g) in routing.argmax.iter().zip(upstream.data()) {
        grad[src] += g;
    }
    FeatureMaps::new(fmaps.maps, fmaps.samples, fmaps.streams, grad)
}

/// Records adaptive pooling of a `(batch, M, w', h')` node on a tape.
pub fn pool_on_tape(tape: &mut Tape, x: Var, params: DapParams) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let [n, m, w, h] = shape[..] else {
        return Err(Error::dim(
            "dap",
            format!("expected (batch, maps, samples, streams), got {shape:?}"),
        ));
    };
    let plan = DapPlan::new(w, h, params)?;
    tape.max_window(x, plan.windows(), &[n, m, params.width, params.height])
}
