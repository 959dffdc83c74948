use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{FeatureShape, LayerSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Named trainable tensors. A parameter's position is its id on the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParameterSet {
    pub fn new(names: Vec<String>, tensors: Vec<Tensor>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::config("parameter names and tensors differ in count"));
        }
        Ok(ParameterSet { names, tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn tensor(&self, id: usize) -> &Tensor {
        &self.tensors[id]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Same names and shapes.
    pub fn same_layout(&self, other: &ParameterSet) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }

    /// Elementwise mean of equally shaped sets.
    pub fn mean_of(sets: &[ParameterSet]) -> Result<ParameterSet> {
        let first = sets
            .first()
            .ok_or_else(|| Error::config("cannot average zero parameter sets"))?;
        let mut acc = first.clone();
        for s in &sets[1..] {
            if !s.same_layout(first) {
                return Err(Error::config("parameter sets differ in layout"));
            }
            for (a, b) in acc.tensors.iter_mut().zip(&s.tensors) {
                a.add_assign(b)?;
            }
        }
        let scale = 1.0 / sets.len() as f64;
        for t in &mut acc.tensors {
            t.scale(scale);
        }
        Ok(acc)
    }

    /// Flat little-endian bytes of every value, in parameter order.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().flat_map(|x| x.to_le_bytes()))
            .collect()
    }
}

/// Declared parameters of one layer: `(name, shape, fan_in, fan_out)`; fans of
/// zero mark a bias.
pub(crate) fn layer_parameters(spec: &ModelSpec) -> Result<Vec<(String, Vec<usize>, usize, usize)>> {
    spec.validate()?;
    let shapes = spec.shapes(spec.input.samples, spec.input.streams)?;
    let mut prev = FeatureShape::Maps {
        maps: 1,
        samples: spec.input.samples,
        streams: spec.input.streams,
    };
    let mut out = Vec::new();
    for (idx, (layer, &shape)) in spec.layers.iter().zip(&shapes).enumerate() {
        match *layer {
            LayerSpec::Conv2d { filters, kernel, .. } => {
                let FeatureShape::Maps { maps: cin, .. } = prev else {
                    unreachable!("validated")
                };
                let (k1, k2) = kernel;
                out.push((
                    format!("conv{idx}.kernel"),
                    vec![filters, cin, k1, k2],
                    cin * k1 * k2,
                    filters * k1 * k2,
                ));
                out.push((format!("conv{idx}.bias"), vec![filters], 0, 0));
            }
            LayerSpec::Lstm { units, .. } => {
                let (_, features) = prev.as_sequence().expect("validated");
                out.push((
                    format!("lstm{idx}.input_kernel"),
                    vec![features, 4 * units],
                    features,
                    4 * units,
                ));
                out.push((
                    format!("lstm{idx}.recurrent_kernel"),
                    vec![units, 4 * units],
                    units,
                    4 * units,
                ));
                out.push((format!("lstm{idx}.bias"), vec![4 * units], 0, 0));
            }
            LayerSpec::Dense { units, .. } => {
                let features = prev.numel();
                out.push((format!("dense{idx}.kernel"), vec![features, units], features, units));
                out.push((format!("dense{idx}.bias"), vec![units], 0, 0));
            }
            _ => {}
        }
        prev = shape;
    }
    let features = prev.numel();
    out.push((
        "head.kernel".into(),
        vec![features, spec.classes],
        features,
        spec.classes,
    ));
    out.push(("head.bias".into(), vec![spec.classes], 0, 0));
    Ok(out)
}

/// Initializes every parameter from a seeded Glorot-uniform range; biases
/// start at zero except the LSTM forget gate, which starts at one.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<ParameterSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for (name, shape, fan_in, fan_out) in layer_parameters(spec)? {
        let n: usize = shape.iter().product();
        let data = if fan_in + fan_out == 0 {
            let mut b = vec![0.0; n];
            if name.ends_with(".bias") && name.starts_with("lstm") {
                let units = n / 4;
                b[units..2 * units].fill(1.0);
            }
            b
        } else {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.random_range(-limit..limit)).collect()
        };
        names.push(name);
        tensors.push(Tensor::new(shape, data)?);
    }
    ParameterSet::new(names, tensors)
}

/// Trainable scalar count without allocating the parameters.
pub fn parameter_count(spec: &ModelSpec) -> Result<usize> {
    Ok(layer_parameters(spec)?
        .iter()
        .map(|(_, shape, ..)| shape.iter().product::<usize>())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{Activation, InputDims};

    #[test]
    fn toy_model_is_small() {
        let spec = ModelSpec::toy_adaptive(5);
        let params = build_model(&spec, 0).unwrap();
        assert!(params.count() < 2000, "{}", params.count());
        assert_eq!(params.count(), parameter_count(&spec).unwrap());
    }

    #[test]
    fn adaptive_and_original_toys_have_equal_counts() {
        assert_eq!(
            parameter_count(&ModelSpec::toy_adaptive(5)).unwrap(),
            parameter_count(&ModelSpec::toy_original(5)).unwrap()
        );
        for classes in [5, 6, 13] {
            assert_eq!(
                parameter_count(&ModelSpec::cnn_rnn(classes, 6, true)).unwrap(),
                parameter_count(&ModelSpec::cnn_rnn(classes, 6, false)).unwrap()
            );
            assert_eq!(
                parameter_count(&ModelSpec::cnn_fnn(classes, 9, true)).unwrap(),
                parameter_count(&ModelSpec::cnn_fnn(classes, 9, false)).unwrap()
            );
        }
    }

    #[test]
    fn smallest_dense_has_two_parameters() {
        let spec = ModelSpec {
            name: "tiny".into(),
            layers: vec![],
            classes: 1,
            adaptive: false,
            input: InputDims {
                samples: 1,
                streams: 1,
            },
            axes_per_sensor: 1,
        };
        assert_eq!(parameter_count(&spec).unwrap(), 2);
        let mut with_dense = spec.clone();
        with_dense.layers.push(LayerSpec::Dense {
            units: 1,
            activation: Activation::Linear,
        });
        assert_eq!(parameter_count(&with_dense).unwrap(), 4);
    }

    #[test]
    fn seeded_build_is_reproducible() {
        let spec = ModelSpec::toy_adaptive(5);
        assert_eq!(build_model(&spec, 7).unwrap(), build_model(&spec, 7).unwrap());
        assert_ne!(build_model(&spec, 7).unwrap(), build_model(&spec, 8).unwrap());
    }

    #[test]
    fn mean_of_symmetric_displacements() {
        let spec = ModelSpec::toy_adaptive(5);
        let p = build_model(&spec, 1).unwrap();
        let mut plus = p.clone();
        let mut minus = p.clone();
        for (a, b) in plus.tensors_mut().iter_mut().zip(minus.tensors_mut()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data_mut()) {
                *x += 0.25;
                *y -= 0.25;
            }
        }
        let mean = ParameterSet::mean_of(&[plus, minus]).unwrap();
        for (a, b) in mean.tensors().iter().zip(p.tensors()) {
            assert!(a.max_abs_diff(b) < 1e-15);
        }
    }
}
