use rand::Rng;

use super::params::ParameterSet;
use super::spec::{Activation, LayerSpec, ModelSpec};
use crate::autodiff::{PoolWindows, Tape, Var};
use crate::dap::{pool_on_tape, FeatureMaps};
use crate::error::{Error, Result};
use crate::signal::TimeWindow;
use crate::tensor::Tensor;

/// Consumer of the final feature maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    Dense,
    Recurrent,
}

/// Flattens `M` maps of `w' x h'` for a classifier head.
///
/// Dense heads get the maps laid end to end (length `w'·h'·M`); recurrent
/// heads get `w'` rows where row `i` holds sample `i` of every map side by
/// side, so column `m·h' + j` is stream `j` of map `m`.
pub fn reshape_for_head(fmaps: &FeatureMaps, head: Head) -> Tensor {
    let (m, w, h) = (fmaps.maps(), fmaps.samples(), fmaps.streams());
    match head {
        Head::Dense => Tensor::new(vec![m * w * h], fmaps.data().to_vec()).expect("sized"),
        Head::Recurrent => {
            let mut out = Vec::with_capacity(m * w * h);
            for i in 0..w {
                for map in 0..m {
                    out.extend_from_slice(&fmaps.map(map)[i * h..(i + 1) * h]);
                }
            }
            Tensor::new(vec![w, m * h], out).expect("sized")
        }
    }
}

/// Tape version of [`reshape_for_head`] with a leading batch axis:
/// `(N, M, w', h')` becomes `(N, M·w'·h')` or `(N, w', M·h')`.
pub fn reshape_for_head_on_tape(tape: &mut Tape, x: Var, head: Head) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let [n, m, w, h] = shape[..] else {
        return Err(Error::dim("reshape-for-head", format!("expected 4 axes, got {shape:?}")));
    };
    match head {
        Head::Dense => tape.reshape(x, &[n, m * w * h]),
        Head::Recurrent => {
            if m == 1 {
                return tape.reshape(x, &[n, w, h]);
            }
            let mut parts = Vec::with_capacity(m);
            for map in 0..m {
                let s = tape.slice(x, 1, map, map + 1)?;
                parts.push(tape.reshape(s, &[n, w, h])?);
            }
            tape.concat(&parts, 2)
        }
    }
}

/// Stacks equally sized windows into a `(N, 1, samples, streams)` batch.
pub fn windows_to_batch(windows: &[&TimeWindow]) -> Result<Tensor> {
    let first = windows
        .first()
        .ok_or_else(|| Error::dim("batch", "no windows"))?;
    let (w, h) = (first.samples(), first.streams());
    let mut data = Vec::with_capacity(windows.len() * w * h);
    for win in windows {
        if (win.samples(), win.streams()) != (w, h) {
            return Err(Error::dim(
                "batch",
                format!(
                    "window {}x{} does not match {w}x{h}",
                    win.samples(),
                    win.streams()
                ),
            ));
        }
        data.extend_from_slice(win.data());
    }
    Tensor::new(vec![windows.len(), 1, w, h], data)
}

fn activate(tape: &mut Tape, x: Var, act: Activation) -> Var {
    match act {
        Activation::Linear => x,
        Activation::Relu => tape.relu(x),
        Activation::Tanh => tape.tanh(x),
        Activation::Sigmoid => tape.sigmoid(x),
    }
}

/// Rejects inputs the model cannot take: fixed models only accept their
/// build-time extent, adaptive ones any extent up to the build-time stream count.
pub fn check_input(spec: &ModelSpec, samples: usize, streams: usize) -> Result<()> {
    let native = (spec.input.samples, spec.input.streams);
    if !spec.adaptive && (samples, streams) != native {
        return Err(Error::dim(
            "forward",
            format!(
                "fixed-dimension model built for {}x{} cannot take {samples}x{streams}",
                native.0, native.1
            ),
        ));
    }
    if streams > native.1 {
        return Err(Error::dim(
            "forward",
            format!("{streams} streams exceed the {} the model was built for", native.1),
        ));
    }
    if samples == 0 || streams == 0 {
        return Err(Error::dim("forward", "empty window"));
    }
    Ok(())
}

fn max_pool_windows(samples: usize, streams: usize, pool: (usize, usize)) -> Result<PoolWindows> {
    let (so, to) = (samples / pool.0, streams / pool.1);
    let mut cells = Vec::with_capacity(so * to);
    for i in 0..so {
        for j in 0..to {
            let mut cell = Vec::with_capacity(pool.0 * pool.1);
            for a in i * pool.0..(i + 1) * pool.0 {
                for b in j * pool.1..(j + 1) * pool.1 {
                    cell.push(a * streams + b);
                }
            }
            cells.push(cell);
        }
    }
    PoolWindows::new(samples * streams, cells)
}

/// One LSTM layer over `(N, T, F)`; returns `(N, U)` or `(N, T, U)`.
fn lstm(
    tape: &mut Tape,
    x: Var,
    wx: Var,
    wh: Var,
    b: Var,
    units: usize,
    return_sequences: bool,
) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let [n, steps, features] = shape[..] else {
        return Err(Error::dim("lstm", format!("expected (batch, steps, features), got {shape:?}")));
    };
    let mut h: Option<Var> = None;
    let mut c: Option<Var> = None;
    let mut outputs = Vec::new();
    for t in 0..steps {
        let xt = tape.slice(x, 1, t, t + 1)?;
        let xt = tape.reshape(xt, &[n, features])?;
        let mut z = tape.matmul(xt, wx)?;
        if let Some(h) = h {
            let r = tape.matmul(h, wh)?;
            z = tape.add(z, r)?;
        }
        let z = tape.add(z, b)?;
        let i = tape.slice(z, 1, 0, units)?;
        let i = tape.sigmoid(i);
        let g = tape.slice(z, 1, 2 * units, 3 * units)?;
        let g = tape.tanh(g);
        let o = tape.slice(z, 1, 3 * units, 4 * units)?;
        let o = tape.sigmoid(o);
        let mut ct = tape.mul(i, g)?;
        if let Some(c) = c {
            let f = tape.slice(z, 1, units, 2 * units)?;
            let f = tape.sigmoid(f);
            let kept = tape.mul(f, c)?;
            ct = tape.add(kept, ct)?;
        }
        let squashed = tape.tanh(ct);
        let ht = tape.mul(o, squashed)?;
        if return_sequences {
            outputs.push(tape.reshape(ht, &[n, 1, units])?);
        }
        h = Some(ht);
        c = Some(ct);
    }
    if return_sequences {
        tape.concat(&outputs, 1)
    } else {
        h.ok_or_else(|| Error::dim("lstm", "zero-length sequence"))
    }
}

/// Records the forward pass of a `(N, 1, w, h)` batch and returns the
/// `(N, C)` class scores. Parameter `k` of `params` is registered under id
/// `k`. Dropout is active only when `dropout_rng` is given.
pub fn forward_on_tape<R: Rng + ?Sized>(
    tape: &mut Tape,
    spec: &ModelSpec,
    params: &ParameterSet,
    batch: &Tensor,
    mut dropout_rng: Option<&mut R>,
) -> Result<Var> {
    let shape = batch.shape().to_vec();
    let [n, 1, w, h] = shape[..] else {
        return Err(Error::dim("forward", format!("expected (batch, 1, samples, streams), got {shape:?}")));
    };
    check_input(spec, w, h)?;
    let mut next = 0usize;
    let mut take = |tape: &mut Tape| {
        let v = tape.param(next, params.tensor(next).clone());
        next += 1;
        v
    };
    let mut x = tape.constant(batch.clone());
    let mut maps = true;
    for layer in &spec.layers {
        x = match *layer {
            LayerSpec::Conv2d {
                padding, activation, ..
            } => {
                let k = take(tape);
                let b = take(tape);
                let y = tape.conv2d(x, k, Some(b), padding)?;
                activate(tape, y, activation)
            }
            LayerSpec::MaxPool2d { pool } => {
                let s = tape.value(x).shape().to_vec();
                let windows = max_pool_windows(s[2], s[3], pool)?;
                tape.max_window(x, &windows, &[s[0], s[1], s[2] / pool.0, s[3] / pool.1])?
            }
            LayerSpec::Dap { .. } => {
                let p = spec.dap_params().expect("layer present");
                pool_on_tape(tape, x, p)?
            }
            LayerSpec::Dropout { rate } => match dropout_rng.as_deref_mut() {
                Some(rng) if rate > 0.0 => {
                    let s = tape.value(x).shape().to_vec();
                    let keep = 1.0 / (1.0 - rate);
                    let numel: usize = s.iter().product();
                    let mask: Vec<f64> = (0..numel)
                        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                        .collect();
                    let mask = tape.constant(Tensor::new(s, mask)?);
                    tape.mul(x, mask)?
                }
                _ => x,
            },
            LayerSpec::Lstm {
                units,
                return_sequences,
            } => {
                if maps {
                    x = reshape_for_head_on_tape(tape, x, Head::Recurrent)?;
                    maps = false;
                }
                let wx = take(tape);
                let wh = take(tape);
                let b = take(tape);
                lstm(tape, x, wx, wh, b, units, return_sequences)?
            }
            LayerSpec::Dense { activation, .. } => {
                x = flatten(tape, x, &mut maps)?;
                let k = take(tape);
                let b = take(tape);
                let y = tape.matmul(x, k)?;
                let y = tape.add(y, b)?;
                activate(tape, y, activation)
            }
        };
    }
    x = flatten(tape, x, &mut maps)?;
    let k = take(tape);
    let b = take(tape);
    let logits = tape.matmul(x, k)?;
    let logits = tape.add(logits, b)?;
    debug_assert_eq!(tape.value(logits).shape(), [n, spec.classes]);
    Ok(logits)
}

fn flatten(tape: &mut Tape, x: Var, maps: &mut bool) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    if *maps {
        *maps = false;
        return reshape_for_head_on_tape(tape, x, Head::Dense);
    }
    if s.len() == 2 {
        return Ok(x);
    }
    let rest: usize = s[1..].iter().product();
    tape.reshape(x, &[s[0], rest])
}

/// Accuracy and mean loss over a set of windows.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    pub count: usize,
    /// Per class: `(correct, total)`.
    pub per_class: Vec<(usize, usize)>,
}

/// A model spec paired with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub spec: ModelSpec,
    pub params: ParameterSet,
}

/// Windows per tape when evaluating.
const EVAL_CHUNK: usize = 256;

impl Classifier {
    pub fn new(spec: ModelSpec, params: ParameterSet) -> Result<Self> {
        let expected = super::params::layer_parameters(&spec)?;
        let ok = expected.len() == params.len()
            && expected
                .iter()
                .zip(params.iter())
                .all(|((name, shape, ..), (n, t))| name == n && shape.as_slice() == t.shape());
        if !ok {
            return Err(Error::config(format!(
                "parameters do not match the layout of model {:?}",
                spec.name
            )));
        }
        Ok(Classifier { spec, params })
    }

    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        let params = super::params::build_model(&spec, seed)?;
        Ok(Classifier { spec, params })
    }

    /// Class scores for one window. With a dropout generator the pass runs in
    /// training mode.
    pub fn forward<R: Rng + ?Sized>(&self, window: &TimeWindow, dropout_rng: Option<&mut R>) -> Result<Vec<f64>> {
        let batch = windows_to_batch(&[window])?;
        let mut tape = Tape::new();
        let logits = forward_on_tape(&mut tape, &self.spec, &self.params, &batch, dropout_rng)?;
        Ok(tape.value(logits).data().to_vec())
    }

    /// `(N, C)` scores for equally sized windows, evaluation mode.
    pub fn scores(&self, windows: &[&TimeWindow]) -> Result<Tensor> {
        let classes = self.spec.classes;
        let mut out = Vec::with_capacity(windows.len() * classes);
        for chunk in windows.chunks(EVAL_CHUNK) {
            let batch = windows_to_batch(chunk)?;
            let mut tape = Tape::new();
            let logits = forward_on_tape::<rand::rngs::ThreadRng>(&mut tape, &self.spec, &self.params, &batch, None)?;
            out.extend_from_slice(tape.value(logits).data());
        }
        Tensor::new(vec![windows.len(), classes], out)
    }

    pub fn predict(&self, windows: &[&TimeWindow]) -> Result<Vec<usize>> {
        let scores = self.scores(windows)?;
        Ok(scores.data().chunks(self.spec.classes).map(argmax).collect())
    }

    /// Scores labelled windows. Windows may differ in size between calls but
    /// not within one.
    pub fn evaluate(&self, windows: &[&TimeWindow]) -> Result<Evaluation> {
        let classes = self.spec.classes;
        let labels = windows
            .iter()
            .map(|w| {
                w.label()
                    .filter(|&y| y < classes)
                    .ok_or_else(|| Error::config("evaluation windows need labels below the class count"))
            })
            .collect::<Result<Vec<_>>>()?;
        let scores = self.scores(windows)?;
        let mut per_class = vec![(0usize, 0usize); classes];
        let mut loss = 0.0;
        let mut correct = 0;
        for (row, &y) in scores.data().chunks(classes).zip(&labels) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            per_class[y].1 += 1;
            if argmax(row) == y {
                correct += 1;
                per_class[y].0 += 1;
            }
        }
        let count = windows.len();
        let denom = count.max(1) as f64;
        Ok(Evaluation {
            accuracy: correct as f64 / denom,
            loss: loss / denom,
            count,
            per_class,
        })
    }
}

/// First index of the largest score.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::softmax;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noise_window(samples: usize, sensors: &[usize], seed: u64) -> TimeWindow {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let streams = sensors.len() * 3;
        let data = (0..samples * streams).map(|_| rng.random_range(-1.0..1.0)).collect();
        TimeWindow::new(data, samples, samples as f64, sensors.to_vec(), 3).unwrap()
    }

    #[test]
    fn adaptive_toy_takes_varied_extents() {
        let model = Classifier::build(ModelSpec::toy_adaptive(5), 3).unwrap();
        for (samples, sensors) in [(128, &[0, 1][..]), (64, &[1][..]), (50, &[0, 1][..]), (20, &[0][..])] {
            let scores = model
                .forward::<ChaCha8Rng>(&noise_window(samples, sensors, 1), None)
                .unwrap();
            assert_eq!(scores.len(), 5);
            let total: f64 = softmax(&scores).iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn original_toy_rejects_other_extents() {
        let model = Classifier::build(ModelSpec::toy_original(5), 3).unwrap();
        model.forward::<ChaCha8Rng>(&noise_window(50, &[0, 1], 1), None).unwrap();
        for (samples, sensors) in [(25, &[0, 1][..]), (50, &[0][..])] {
            let err = model.forward::<ChaCha8Rng>(&noise_window(samples, sensors, 1), None);
            assert!(matches!(err, Err(Error::Dimension { .. })));
        }
    }

    #[test]
    fn adaptive_rejects_too_few_samples() {
        let model = Classifier::build(ModelSpec::toy_adaptive(5), 3).unwrap();
        let err = model.forward::<ChaCha8Rng>(&noise_window(4, &[0, 1], 1), None);
        assert!(matches!(err, Err(Error::UnsupportedDimensions(_))));
    }

    #[test]
    fn zero_weights_give_uniform_softmax() {
        let mut model = Classifier::build(ModelSpec::toy_adaptive(5), 3).unwrap();
        for t in model.params.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        let scores = model.forward::<ChaCha8Rng>(&noise_window(50, &[0, 1], 2), None).unwrap();
        assert!(scores.iter().all(|&s| s == scores[0]));
    }

    #[test]
    fn zero_rate_dropout_matches_evaluation() {
        let mut spec = ModelSpec::toy_adaptive(5);
        spec.layers.insert(3, LayerSpec::Dropout { rate: 0.0 });
        let model = Classifier::build(spec, 4).unwrap();
        let win = noise_window(50, &[0, 1], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let train = model.forward(&win, Some(&mut rng)).unwrap();
        let eval = model.forward::<ChaCha8Rng>(&win, None).unwrap();
        assert_eq!(train, eval);
    }

    #[test]
    fn dropout_is_active_only_in_training() {
        let mut spec = ModelSpec::toy_adaptive(5);
        spec.layers.insert(3, LayerSpec::Dropout { rate: 0.5 });
        let model = Classifier::build(spec, 4).unwrap();
        let win = noise_window(50, &[0, 1], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let train = model.forward(&win, Some(&mut rng)).unwrap();
        let eval = model.forward::<ChaCha8Rng>(&win, None).unwrap();
        assert_ne!(train, eval);
        assert_eq!(eval, model.forward::<ChaCha8Rng>(&win, None).unwrap());
    }

    #[test]
    fn dense_head_length() {
        let fm = FeatureMaps::new(2, 3, 2, (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(reshape_for_head(&fm, Head::Dense).shape(), [12]);
    }

    #[test]
    fn recurrent_single_map_unchanged() {
        let fm = FeatureMaps::new(1, 3, 2, (0..6).map(f64::from).collect()).unwrap();
        let t = reshape_for_head(&fm, Head::Recurrent);
        assert_eq!(t.shape(), [3, 2]);
        assert_eq!(t.data(), fm.data());
    }

    #[test]
    fn recurrent_stacks_maps_per_sample() {
        // maps A = [a0, a1], B = [b0, b1], one stream each
        let fm = FeatureMaps::new(2, 2, 1, vec![10.0, 11.0, 20.0, 21.0]).unwrap();
        let t = reshape_for_head(&fm, Head::Recurrent);
        assert_eq!(t.shape(), [2, 2]);
        assert_eq!(t.data(), [10.0, 20.0, 11.0, 21.0]);
    }

    #[test]
    fn tape_reshape_matches_standalone() {
        let data: Vec<f64> = (0..2 * 3 * 4 * 2).map(f64::from).collect();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 3, 4, 2], data.clone()).unwrap());
        let r = reshape_for_head_on_tape(&mut tape, x, Head::Recurrent).unwrap();
        let got = tape.value(r).clone();
        for n in 0..2 {
            let fm = FeatureMaps::new(3, 4, 2, data[n * 24..(n + 1) * 24].to_vec()).unwrap();
            let want = reshape_for_head(&fm, Head::Recurrent);
            assert_eq!(&got.data()[n * 24..(n + 1) * 24], want.data());
        }
    }

    #[test]
    fn max_pool_takes_block_maxima() {
        let windows = max_pool_windows(4, 2, (2, 1)).unwrap();
        let (values, _) = windows.apply(&[1.0, 5.0, 2.0, 6.0, 3.0, 7.0, 4.0, 8.0]).unwrap();
        assert_eq!(values, [2.0, 6.0, 4.0, 8.0]);
    }

    #[test]
    fn zero_input_lstm_outputs_zero() {
        let mut tape = Tape::new();
        let units = 3;
        let x = tape.constant(Tensor::zeros(&[2, 4, 5]));
        let wx = tape.constant(Tensor::full(&[5, 4 * units], 0.3));
        let wh = tape.constant(Tensor::full(&[units, 4 * units], 0.3));
        let b = tape.constant(Tensor::zeros(&[4 * units]));
        let h = lstm(&mut tape, x, wx, wh, b, units, true).unwrap();
        assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
    }
}
