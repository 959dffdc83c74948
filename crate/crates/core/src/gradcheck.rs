//! Central finite-difference checks of the tape's gradients.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Padding, Primitive, Tape, Var};
use crate::dap::{pool_on_tape, DapParams};
use crate::error::Result;
use crate::nn::{build_model, forward_on_tape, ModelSpec};
use crate::tensor::Tensor;

pub const PRIMITIVE_TOLERANCE: f64 = 1e-5;
pub const MODEL_TOLERANCE: f64 = 1e-4;
pub const PRIMITIVE_STEP: f64 = 1e-4;
pub const MODEL_STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub probes: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

/// Relative error with a floor so near-zero gradients compare absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("sized")
}

/// `sum(x * r)` for fixed pseudo-random weights `r`, so every output element
/// contributes a distinct amount to the scalar.
/// Values at least 0.01 away from zero, so relu has no kink within a step.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.random_range(0.01..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("sized")
}

/// A shuffled evenly spaced grid, so every window has a clear maximum.
pub fn distinct_values(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data: Vec<f64> = (0..n).map(|k| 2.0 * k as f64 / n as f64 - 1.0).collect();
    data.shuffle(rng);
    Tensor::new(shape.to_vec(), data).expect("sized")
}

fn project(tape: &mut Tape, x: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = tape.constant(random_tensor(&shape, &mut rng));
    let y = tape.mul(x, r)?;
    tape.sum(y)
}

/// Compares analytic gradients of `f` against central differences with
/// half-width `step` at `probes` randomly chosen input coordinates.
#[allow(clippy::too_many_arguments)]
pub fn check_function<F>(
    name: &str,
    inputs: &[Tensor],
    tolerance: f64,
    step: f64,
    probes: usize,
    rng: &mut ChaCha8Rng,
    f: F,
) -> Result<CheckResult>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().enumerate().map(|(i, t)| tape.param(i, t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let grads = tape.accumulate_and_reset();
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).data()[0])
    };
    let total: usize = inputs.iter().map(Tensor::numel).sum();
    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for _ in 0..probes {
        let mut k = rng.random_range(0..total);
        let mut which = 0;
        while k >= work[which].numel() {
            k -= work[which].numel();
            which += 1;
        }
        let orig = work[which].data()[k];
        work[which].data_mut()[k] = orig + step;
        let up = eval(&work)?;
        work[which].data_mut()[k] = orig - step;
        let down = eval(&work)?;
        work[which].data_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * step);
        let analytic = grads.get(which).map_or(0.0, |g| g.data()[k]);
        worst = worst.max(relative_error(analytic, numeric));
    }
    Ok(CheckResult {
        name: name.to_string(),
        probes,
        max_rel_error: worst,
        tolerance,
        passed: worst < tolerance,
    })
}

fn primitive_check(p: Primitive, probes: usize, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let name = p.name();
    let (tol, step) = (PRIMITIVE_TOLERANCE, PRIMITIVE_STEP);
    match p {
        Primitive::MatMul => {
            let inputs = [random_tensor(&[6, 9], rng), random_tensor(&[9, 7], rng)];
            check_function(name, &inputs, tol, step, probes, rng, |t, v| {
                let y = t.matmul(v[0], v[1])?;
                project(t, y, 1)
            })
        }
        Primitive::Conv2d => {
            let inputs = [
                random_tensor(&[2, 2, 7, 6], rng),
                random_tensor(&[3, 2, 3, 2], rng),
                random_tensor(&[3], rng),
            ];
            check_function(name, &inputs, tol, step, probes, rng, |t, v| {
                let same = t.conv2d(v[0], v[1], Some(v[2]), Padding::Same)?;
                let valid = t.conv2d(v[0], v[1], Some(v[2]), Padding::Valid)?;
                let a = project(t, same, 2)?;
                let b = project(t, valid, 3)?;
                t.add(a, b)
            })
        }
        Primitive::Add => {
            let inputs = [random_tensor(&[4, 5, 6], rng), random_tensor(&[5, 6], rng)];
            check_function(name, &inputs, tol, step, probes, rng, |t, v| {
                let y = t.add(v[0], v[1])?;
                project(t, y, 4)
            })
        }
        Primitive::Mul => {
            let inputs = [random_tensor(&[8, 8], rng), random_tensor(&[8, 8], rng)];
            check_function(name, &inputs, tol, step, probes, rng, |t, v| {
                let y = t.mul(v[0], v[1])?;
                project(t, y, 5)
            })
        }
        Primitive::Tanh | Primitive::Sigmoid | Primitive::Relu => {
            let inputs = [away_from_zero(&[10, 12], rng)];
            check_function(name, &inputs, tol, step, probes, rng, move |t, v| {
                let y = match p {
                    Primitive::Tanh => t.tanh(v[0]),
                    Primitive::Sigmoid => t.sigmoid(v[0]),
                    _ => t.relu(v[0]),
                };
                project(t, y, 6)
            })
        }
        Primitive::MaxWindow => {
            // six streams pooled onto nine: one replication
            let inputs = [distinct_values(&[2, 3, 20, 6], rng)];
            let params = DapParams::new(5, 9)?;
            check_function(name, &inputs, tol, step, probes, rng, move |t, v| {
                let y = pool_on_tape(t, v[0], params)?;
                project(t, y, 7)
            })
        }
        Primitive::Concat => {
            let inputs = [random_tensor(&[3, 4, 5], rng), random_tensor(&[3, 2, 5], rng)];
            check_function(name, &inputs, tol, step, probes, rng, |t, v| {
                let y = t.concat(&[v[0], v[1], v[0]], 1)?;
                project(t, y, 8)
            })
        }
        Primitive::Slice => {
            let inputs = [random_tensor(&[4, 9, 3], rng)];
            check_function(name, &inputs, tol, step, probes, rng, |t, v| {
                let y = t.slice(v[0], 1, 2, 7)?;
                project(t, y, 9)
            })
        }
        Primitive::Reshape => {
            let inputs = [random_tensor(&[6, 20], rng)];
            check_function(name, &inputs, tol, step, probes, rng, |t, v| {
                let y = t.reshape(v[0], &[4, 5, 6])?;
                project(t, y, 10)
            })
        }
        Primitive::SoftmaxCrossEntropy => {
            let inputs = [random_tensor(&[20, 6], rng)];
            let labels: Vec<usize> = (0..20).map(|_| rng.random_range(0..6)).collect();
            check_function(name, &inputs, tol, step, probes, rng, move |t, v| {
                t.softmax_cross_entropy(v[0], &labels)
            })
        }
    }
}

/// Loss of the toy adaptive model on a random batch, differentiated with
/// respect to every parameter.
pub fn model_check(samples: usize, sensors: usize, probes: usize, rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let spec = ModelSpec::toy_adaptive(5);
    let params = build_model(&spec, rng.random())?;
    let streams = 3 * sensors;
    let batch = random_tensor(&[3, 1, samples, streams], rng);
    let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..5)).collect();
    let names = params.names().to_vec();
    let inputs = params.tensors().to_vec();
    check_function(
        &format!("toy-model {samples}x{streams}"),
        &inputs,
        MODEL_TOLERANCE,
        MODEL_STEP,
        probes,
        rng,
        move |t, v| {
            let current = crate::nn::ParameterSet::new(
                names.clone(),
                v.iter().map(|&x| t.value(x).clone()).collect(),
            )?;
            // the forward pass registers parameter k under id k again
            let logits = forward_on_tape::<ChaCha8Rng>(t, &spec, &current, &batch, None)?;
            t.softmax_cross_entropy(logits, &labels)
        },
    )
}

pub fn run_gradcheck(seed: u64, probes: usize) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    for p in Primitive::ALL {
        checks.push(primitive_check(p, probes, &mut rng)?);
    }
    checks.push(model_check(50, 2, probes, &mut rng)?);
    checks.push(model_check(25, 1, probes, &mut rng)?);
    let passed = checks.iter().all(|c| c.passed);
    Ok(GradcheckReport { seed, checks, passed })
}
