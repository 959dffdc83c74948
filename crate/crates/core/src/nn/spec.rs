use serde::{Deserialize, Serialize};

use crate::autodiff::Padding;
use crate::dap::{DapParams, DEFAULT_AXES_PER_SENSOR};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Sigmoid,
}

/// One layer, in the `Conv2D(n, (k1, k2), padding, activation)` notation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        filters: usize,
        kernel: (usize, usize),
        padding: Padding,
        activation: Activation,
    },
    MaxPool2d {
        pool: (usize, usize),
    },
    /// Dimension-adaptive pooling onto a `width x height` grid per map.
    Dap {
        width: usize,
        height: usize,
    },
    Dropout {
        rate: f64,
    },
    Lstm {
        units: usize,
        #[serde(default)]
        return_sequences: bool,
    },
    Dense {
        units: usize,
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Dap { .. } => "dap",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Lstm { .. } => "lstm",
            LayerSpec::Dense { .. } => "dense",
        }
    }

    fn is_feature_stage(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv2d { .. } | LayerSpec::MaxPool2d { .. } | LayerSpec::Dap { .. }
        )
    }
}

/// Native (build-time) window extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDims {
    pub samples: usize,
    pub streams: usize,
}

/// Layer graph of a classifier. The `classes`-way linear head is implicit
/// after the last listed layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub classes: usize,
    /// Uses dimension-adaptive pooling instead of fixed pooling.
    pub adaptive: bool,
    pub input: InputDims,
    #[serde(default = "default_axes")]
    pub axes_per_sensor: usize,
}

fn default_axes() -> usize {
    DEFAULT_AXES_PER_SENSOR
}

/// Activation shape flowing between layers (batch axis omitted).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureShape {
    Maps { maps: usize, samples: usize, streams: usize },
    Sequence { steps: usize, features: usize },
    Flat { features: usize },
}

impl FeatureShape {
    pub fn numel(self) -> usize {
        match self {
            FeatureShape::Maps { maps, samples, streams } => maps * samples * streams,
            FeatureShape::Sequence { steps, features } => steps * features,
            FeatureShape::Flat { features } => features,
        }
    }

    /// View as a recurrent input: `(steps, features)`.
    pub fn as_sequence(self) -> Option<(usize, usize)> {
        match self {
            FeatureShape::Maps { maps, samples, streams } => Some((samples, streams * maps)),
            FeatureShape::Sequence { steps, features } => Some((steps, features)),
            FeatureShape::Flat { .. } => None,
        }
    }
}

impl ModelSpec {
    pub fn dap_params(&self) -> Option<DapParams> {
        self.layers.iter().find_map(|l| match *l {
            LayerSpec::Dap { width, height } => Some(DapParams {
                width,
                height,
                axes_per_sensor: self.axes_per_sensor,
            }),
            _ => None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::config("a classifier needs at least one class"));
        }
        if self.input.samples == 0 || self.input.streams == 0 || self.axes_per_sensor == 0 {
            return Err(Error::config("input dimensions must be positive"));
        }
        let first_head = self
            .layers
            .iter()
            .position(|l| matches!(l, LayerSpec::Lstm { .. } | LayerSpec::Dense { .. }))
            .unwrap_or(self.layers.len());
        if let Some(late) = self.layers[first_head..].iter().find(|l| l.is_feature_stage()) {
            return Err(Error::config(format!(
                "{} layer after the first dense/recurrent layer",
                late.kind()
            )));
        }
        for layer in &self.layers {
            match *layer {
                LayerSpec::Conv2d { filters, kernel, .. } if filters == 0 || kernel.0 == 0 || kernel.1 == 0 => {
                    return Err(Error::config("convolution needs filters and a non-empty kernel"));
                }
                LayerSpec::MaxPool2d { pool } if pool.0 == 0 || pool.1 == 0 => {
                    return Err(Error::config("pool extent must be positive"));
                }
                LayerSpec::Dap { width, height } if width == 0 || height == 0 => {
                    return Err(Error::config("pooling grid must be at least 1x1"));
                }
                LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                    return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
                }
                LayerSpec::Lstm { units, .. } | LayerSpec::Dense { units, .. } if units == 0 => {
                    return Err(Error::config("layers need at least one unit"));
                }
                _ => {}
            }
        }
        let daps: Vec<usize> = self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Dap { .. }))
            .map(|(i, _)| i)
            .collect();
        if self.adaptive {
            let [dap] = daps[..] else {
                return Err(Error::config(format!(
                    "adaptive models need exactly one adaptive pooling layer, found {}",
                    daps.len()
                )));
            };
            for layer in &self.layers {
                match layer {
                    LayerSpec::Conv2d { padding: Padding::Valid, .. } => {
                        return Err(Error::config("adaptive models require same padding"));
                    }
                    LayerSpec::MaxPool2d { .. } => {
                        return Err(Error::config(
                            "adaptive models replace fixed pooling with the adaptive layer",
                        ));
                    }
                    _ => {}
                }
            }
            let last_conv = self
                .layers
                .iter()
                .rposition(|l| matches!(l, LayerSpec::Conv2d { .. }));
            if last_conv.is_some_and(|c| c > dap) || dap > first_head {
                return Err(Error::config(
                    "the adaptive pooling layer must sit between the last convolution and the head",
                ));
            }
        } else if !daps.is_empty() {
            return Err(Error::config("fixed-dimension models cannot contain adaptive pooling"));
        }
        self.shapes(self.input.samples, self.input.streams).map(|_| ())
    }

    /// Output shape of every layer for a `samples x streams` input, followed by
    /// the head's input shape.
    pub fn shapes(&self, samples: usize, streams: usize) -> Result<Vec<FeatureShape>> {
        let mut shape = FeatureShape::Maps {
            maps: 1,
            samples,
            streams,
        };
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = match (*layer, shape) {
                (
                    LayerSpec::Conv2d {
                        filters,
                        kernel,
                        padding,
                        ..
                    },
                    FeatureShape::Maps { samples, streams, .. },
                ) => {
                    let (Some((_, s)), Some((_, t))) =
                        (padding.geometry(samples, kernel.0), padding.geometry(streams, kernel.1))
                    else {
                        return Err(Error::dim(
                            "conv2d",
                            format!("{samples}x{streams} input smaller than {kernel:?} kernel"),
                        ));
                    };
                    FeatureShape::Maps {
                        maps: filters,
                        samples: s,
                        streams: t,
                    }
                }
                (LayerSpec::MaxPool2d { pool }, FeatureShape::Maps { maps, samples, streams }) => {
                    if samples < pool.0 || streams < pool.1 {
                        return Err(Error::dim(
                            "maxpool2d",
                            format!("{samples}x{streams} input smaller than {pool:?} pool"),
                        ));
                    }
                    FeatureShape::Maps {
                        maps,
                        samples: samples / pool.0,
                        streams: streams / pool.1,
                    }
                }
                (LayerSpec::Dap { width, height }, FeatureShape::Maps { maps, .. }) => FeatureShape::Maps {
                    maps,
                    samples: width,
                    streams: height,
                },
                (LayerSpec::Dropout { .. }, s) => s,
                (LayerSpec::Lstm { units, return_sequences }, s) => {
                    let (steps, _) = s.as_sequence().ok_or_else(|| {
                        Error::dim("lstm", "recurrent layer needs a sequence input")
                    })?;
                    if return_sequences {
                        FeatureShape::Sequence {
                            steps,
                            features: units,
                        }
                    } else {
                        FeatureShape::Flat { features: units }
                    }
                }
                (LayerSpec::Dense { units, .. }, _) => FeatureShape::Flat { features: units },
                (layer, s) => {
                    return Err(Error::dim(
                        "model",
                        format!("{} cannot follow a {s:?} activation", layer.kind()),
                    ))
                }
            };
            out.push(shape);
        }
        Ok(out)
    }

    /// Two convolutions with five 3x3 filters, adaptive pooling onto a 5x6
    /// grid, a five-unit LSTM and the linear head.
    pub fn toy_adaptive(classes: usize) -> Self {
        ModelSpec {
            name: "toy-dana".into(),
            layers: vec![
                conv(5, (3, 3), Padding::Same),
                conv(5, (3, 3), Padding::Same),
                LayerSpec::Dap { width: 5, height: 6 },
                LayerSpec::Lstm {
                    units: 5,
                    return_sequences: false,
                },
            ],
            classes,
            adaptive: true,
            input: InputDims {
                samples: 50,
                streams: 6,
            },
            axes_per_sensor: DEFAULT_AXES_PER_SENSOR,
        }
    }

    /// Fixed-dimension counterpart of [`ModelSpec::toy_adaptive`]: a 10x1 max
    /// pool takes the 50x6 maps to the same 5x6 grid, so the parameter count
    /// is identical.
    pub fn toy_original(classes: usize) -> Self {
        ModelSpec {
            name: "toy-original".into(),
            layers: vec![
                conv(5, (3, 3), Padding::Same),
                conv(5, (3, 3), Padding::Same),
                LayerSpec::MaxPool2d { pool: (10, 1) },
                LayerSpec::Lstm {
                    units: 5,
                    return_sequences: false,
                },
            ],
            classes,
            adaptive: false,
            input: InputDims {
                samples: 50,
                streams: 6,
            },
            axes_per_sensor: DEFAULT_AXES_PER_SENSOR,
        }
    }

    /// CNN-RNN reference shape (four temporal convolutions, two LSTMs) for
    /// 128-sample windows. Best effort; layer widths are not authoritative.
    pub fn cnn_rnn(classes: usize, streams: usize, adaptive: bool) -> Self {
        let padding = if adaptive { Padding::Same } else { Padding::Valid };
        let mut layers: Vec<LayerSpec> = (0..4).map(|_| conv(64, (5, 1), padding)).collect();
        if adaptive {
            // four valid (5,1) convolutions leave 112 samples
            layers.push(LayerSpec::Dap {
                width: 112,
                height: streams,
            });
        }
        layers.push(LayerSpec::Dropout { rate: 0.5 });
        layers.push(LayerSpec::Lstm {
            units: 128,
            return_sequences: true,
        });
        layers.push(LayerSpec::Lstm {
            units: 128,
            return_sequences: false,
        });
        ModelSpec {
            name: format!("cnn-rnn-{}", if adaptive { "dana" } else { "original" }),
            layers,
            classes,
            adaptive,
            input: InputDims { samples: 128, streams },
            axes_per_sensor: DEFAULT_AXES_PER_SENSOR,
        }
    }

    /// CNN-FNN reference shape (three conv/pool stages and a dense layer) for
    /// 128-sample windows. Best effort; layer widths are not authoritative.
    pub fn cnn_fnn(classes: usize, streams: usize, adaptive: bool) -> Self {
        let padding = if adaptive { Padding::Same } else { Padding::Valid };
        let mut layers = Vec::new();
        for filters in [96, 192, 192] {
            layers.push(conv(filters, (9, 1), padding));
            if !adaptive {
                layers.push(LayerSpec::MaxPool2d { pool: (2, 1) });
            }
        }
        if adaptive {
            // 128 -> 120 -> 60 -> 52 -> 26 -> 18 -> 9 in the fixed variant
            layers.push(LayerSpec::Dap {
                width: 9,
                height: streams,
            });
        }
        layers.push(LayerSpec::Dense {
            units: 100,
            activation: Activation::Relu,
        });
        layers.push(LayerSpec::Dropout { rate: 0.5 });
        ModelSpec {
            name: format!("cnn-fnn-{}", if adaptive { "dana" } else { "original" }),
            layers,
            classes,
            adaptive,
            input: InputDims { samples: 128, streams },
            axes_per_sensor: DEFAULT_AXES_PER_SENSOR,
        }
    }

    /// Looks up a named preset: `toy-dana`, `toy-original`, `cnn-rnn-dana`,
    /// `cnn-rnn-original`, `cnn-fnn-dana` or `cnn-fnn-original`.
    pub fn preset(name: &str, classes: usize, streams: usize) -> Result<Self> {
        Ok(match name {
            "toy-dana" => Self::toy_adaptive(classes),
            "toy-original" => Self::toy_original(classes),
            "cnn-rnn-dana" => Self::cnn_rnn(classes, streams, true),
            "cnn-rnn-original" => Self::cnn_rnn(classes, streams, false),
            "cnn-fnn-dana" => Self::cnn_fnn(classes, streams, true),
            "cnn-fnn-original" => Self::cnn_fnn(classes, streams, false),
            other => return Err(Error::config(format!("unknown model preset {other:?}"))),
        })
    }
}

fn conv(filters: usize, kernel: (usize, usize), padding: Padding) -> LayerSpec {
    LayerSpec::Conv2d {
        filters,
        kernel,
        padding,
        activation: Activation::Relu,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in [
            "toy-dana",
            "toy-original",
            "cnn-rnn-dana",
            "cnn-rnn-original",
            "cnn-fnn-dana",
            "cnn-fnn-original",
        ] {
            ModelSpec::preset(name, 6, 6).unwrap().validate().unwrap();
        }
        assert!(ModelSpec::preset("vgg", 6, 6).is_err());
    }

    #[test]
    fn adaptive_with_valid_padding_rejected() {
        let mut spec = ModelSpec::toy_adaptive(5);
        spec.layers[0] = conv(5, (3, 3), Padding::Valid);
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn adaptive_needs_exactly_one_dap() {
        let mut spec = ModelSpec::toy_adaptive(5);
        spec.layers.remove(2);
        assert!(spec.validate().is_err());
        let mut spec = ModelSpec::toy_adaptive(5);
        spec.layers.insert(2, LayerSpec::Dap { width: 5, height: 6 });
        assert!(spec.validate().is_err());
    }

    #[test]
    fn dap_must_follow_last_conv() {
        let mut spec = ModelSpec::toy_adaptive(5);
        spec.layers.swap(1, 2);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn valid_padding_shrinks() {
        let mut spec = ModelSpec::toy_original(5);
        spec.layers = vec![conv(2, (3, 2), Padding::Valid)];
        let shapes = spec.shapes(10, 6).unwrap();
        assert_eq!(
            shapes[0],
            FeatureShape::Maps {
                maps: 2,
                samples: 8,
                streams: 5
            }
        );
    }

    #[test]
    fn spec_roundtrips_through_json() {
        let spec = ModelSpec::toy_adaptive(5);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<ModelSpec>(&text).unwrap(), spec);
    }
}
