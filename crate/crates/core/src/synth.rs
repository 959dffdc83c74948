//! Controlled synthetic dataset: five classes of two simulated 3-axis
//! sensors whose inter-sensor correlation is set by a low, moderate or high
//! setting.
//!
//! Each axis pair starts from a bivariate Gaussian base with class variance
//! `sigma2` and correlation `rho`. Both streams then receive three sinusoids,
//! a centred linear trend and a moving-average smoothing before white noise
//! is added. The sensor-2 components copy sensor 1 in the high setting, mix
//! sensor 1 with an independent profile in the moderate one and come from
//! the independent profile in the low one.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetInfo, LabeledDataset, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::signal::TimeWindow;

pub const AXES: usize = 3;
pub const SENSORS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationSetting {
    Low,
    Moderate,
    High,
}

impl CorrelationSetting {
    pub const ALL: [CorrelationSetting; 3] = [Self::Low, Self::Moderate, Self::High];

    pub fn rho(self) -> f64 {
        match self {
            Self::Low => 0.01,
            Self::Moderate => 0.58,
            Self::High => 0.89,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Low => "low",
            Self::Moderate => "moderate",
            Self::High => "high",
        }
    }
}

/// Per-sample mutual information of a bivariate Gaussian, in nats.
pub fn gaussian_mutual_information(rho: f64) -> f64 {
    -0.5 * (1.0 - rho * rho).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Periodic {
    pub amplitude: f64,
    /// Cycles per window.
    pub frequency: f64,
    pub phase: f64,
}

/// Component characteristics of one stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentSet {
    pub periodic: [Periodic; 3],
    /// Trend rise over the whole window.
    pub slope: f64,
    /// Moving-average length in samples.
    pub smoothing: usize,
    pub noise_std: f64,
}

impl ComponentSet {
    /// No components: adding it leaves a stream unchanged.
    pub fn inert() -> Self {
        ComponentSet {
            periodic: [Periodic {
                amplitude: 0.0,
                frequency: 1.0,
                phase: 0.0,
            }; 3],
            slope: 0.0,
            smoothing: 1,
            noise_std: 0.0,
        }
    }

    /// Mean power of the deterministic part (sinusoids plus trend).
    pub fn deterministic_energy(&self, w: usize) -> f64 {
        let mut clean = vec![0.0; w];
        self.add_deterministic(&mut clean);
        clean.iter().map(|x| x * x).sum::<f64>() / w as f64
    }

    fn add_deterministic(&self, x: &mut [f64]) {
        let w = x.len() as f64;
        let centre = (w - 1.0) / 2.0;
        for (i, v) in x.iter_mut().enumerate() {
            let t = i as f64;
            for p in &self.periodic {
                *v += p.amplitude * (2.0 * PI * p.frequency * t / w + p.phase).sin();
            }
            *v += self.slope * (t - centre) / w;
        }
    }
}

/// Characteristics indexed by `[class][profile][axis]`. Profile 0 drives
/// sensor 1; profile 1 is the independent profile sensor 2 draws from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentTable {
    pub profiles: Vec<[[ComponentSet; AXES]; 2]>,
}

/// Ranges the planned component table is drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentPlan {
    /// Sinusoid amplitude as a multiple of the class standard deviation.
    pub amplitude: (f64, f64),
    /// Largest whole number of cycles per window; frequencies are distinct.
    pub max_cycles: usize,
    /// Trend rise as a multiple of the class standard deviation, either sign.
    pub slope: (f64, f64),
    pub smoothing: (usize, usize),
    pub noise_std: (f64, f64),
}

impl Default for ComponentPlan {
    fn default() -> Self {
        ComponentPlan {
            amplitude: (0.45, 0.6),
            max_cycles: 5,
            slope: (0.4, 0.8),
            smoothing: (2, 4),
            noise_std: (0.25, 0.35),
        }
    }
}

impl ComponentTable {
    /// Draws a table from `plan`, seeded independently of the window data.
    pub fn planned(plan: &ComponentPlan, class_variances: &[f64], seed: u64) -> Result<Self> {
        if plan.max_cycles < 3 || plan.smoothing.0 == 0 || plan.smoothing.0 > plan.smoothing.1 {
            return Err(Error::config("component plan needs >= 3 cycles and a valid smoothing range"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let uniform = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| if hi > lo { rng.random_range(lo..hi) } else { lo };
        let mut profiles = Vec::with_capacity(class_variances.len());
        for &var in class_variances {
            let sd = var.sqrt();
            let draw = |rng: &mut ChaCha8Rng| {
                let freqs = sample(rng, plan.max_cycles, 3);
                let periodic = std::array::from_fn(|k| Periodic {
                    amplitude: uniform(plan.amplitude.0, plan.amplitude.1, rng) * sd,
                    frequency: (freqs.index(k) + 1) as f64,
                    phase: uniform(0.0, 2.0 * PI, rng),
                });
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                ComponentSet {
                    periodic,
                    slope: sign * uniform(plan.slope.0, plan.slope.1, rng) * sd,
                    smoothing: rng.random_range(plan.smoothing.0..=plan.smoothing.1),
                    noise_std: uniform(plan.noise_std.0, plan.noise_std.1, rng),
                }
            };
            let profile = |rng: &mut ChaCha8Rng| -> [ComponentSet; AXES] { std::array::from_fn(|_| draw(rng)) };
            let p0 = profile(&mut rng);
            let p1 = profile(&mut rng);
            profiles.push([p0, p1]);
        }
        Ok(ComponentTable { profiles })
    }

    /// Components of `(class, sensor, axis)` under `setting`.
    pub fn components(&self, class: usize, sensor: usize, axis: usize, setting: CorrelationSetting) -> ComponentSet {
        let [p0, p1] = &self.profiles[class];
        if sensor == 0 {
            return p0[axis].clone();
        }
        match setting {
            CorrelationSetting::High => p0[axis].clone(),
            CorrelationSetting::Low => p1[axis].clone(),
            CorrelationSetting::Moderate => {
                let (a, b) = (&p0[axis], &p1[axis]);
                ComponentSet {
                    periodic: [a.periodic[0], a.periodic[1], b.periodic[2]],
                    slope: b.slope,
                    smoothing: a.smoothing,
                    noise_std: a.noise_std,
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub samples: usize,
    pub rate_hz: f64,
    pub class_variances: Vec<f64>,
    pub setting: CorrelationSetting,
    /// Overrides the setting's correlation coefficient.
    pub rho: Option<f64>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
    /// Seeds the planned component table when `components` is absent.
    pub characteristics_seed: u64,
    pub plan: ComponentPlan,
    pub components: Option<ComponentTable>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            samples: 50,
            rate_hz: 50.0,
            class_variances: vec![0.6, 0.7, 0.8, 0.9, 1.0],
            setting: CorrelationSetting::High,
            rho: None,
            train_per_class: 800,
            test_per_class: 200,
            seed: 0,
            characteristics_seed: 2021,
            plan: ComponentPlan::default(),
            components: None,
        }
    }
}

impl SyntheticConfig {
    pub fn with_setting(setting: CorrelationSetting) -> Self {
        SyntheticConfig {
            setting,
            ..Self::default()
        }
    }

    pub fn classes(&self) -> usize {
        self.class_variances.len()
    }

    pub fn rho(&self) -> f64 {
        self.rho.unwrap_or_else(|| self.setting.rho())
    }

    pub fn validate(&self) -> Result<()> {
        let rho = self.rho();
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::config(format!("rho {rho} outside [0, 1)")));
        }
        if self.class_variances.is_empty() || self.class_variances.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::config("class variances must be positive"));
        }
        if self.samples < 2 || !(self.rate_hz > 0.0) {
            return Err(Error::config("windows need >= 2 samples and a positive rate"));
        }
        if let Some(t) = &self.components {
            if t.profiles.len() != self.classes() {
                return Err(Error::config("component table does not cover every class"));
            }
        }
        Ok(())
    }

    pub fn resolved_components(&self) -> Result<ComponentTable> {
        match &self.components {
            Some(t) => Ok(t.clone()),
            None => ComponentTable::planned(&self.plan, &self.class_variances, self.characteristics_seed),
        }
    }
}

/// Draws `S1 ~ N(0, sigma2)` and `S2 | S1 ~ N(rho·S1, (1 - rho²)·sigma2)`.
pub fn sample_correlated_base<R: Rng + ?Sized>(sigma2: f64, rho: f64, w: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let marginal = Normal::new(0.0, sigma2.sqrt()).expect("positive variance");
    let residual = Normal::new(0.0, ((1.0 - rho * rho) * sigma2).sqrt()).expect("finite");
    let s1: Vec<f64> = (0..w).map(|_| marginal.sample(rng)).collect();
    let s2 = s1.iter().map(|&x| rho * x + residual.sample(rng)).collect();
    (s1, s2)
}

/// Adds sinusoids and trend, smooths with a centred moving average truncated
/// at the window edges, then adds white noise.
pub fn add_components<R: Rng + ?Sized>(stream: &[f64], comp: &ComponentSet, rng: &mut R) -> Result<Vec<f64>> {
    let w = stream.len();
    if comp.smoothing == 0 || comp.smoothing > w {
        return Err(Error::config(format!(
            "smoothing length {} must lie in 1..={w}",
            comp.smoothing
        )));
    }
    if !(comp.noise_std >= 0.0) {
        return Err(Error::config("noise std must be non-negative"));
    }
    let mut x = stream.to_vec();
    comp.add_deterministic(&mut x);
    let lo = (comp.smoothing - 1) / 2;
    let hi = comp.smoothing / 2;
    let mut out: Vec<f64> = (0..w)
        .map(|k| {
            let (a, b) = (k.saturating_sub(lo), (k + hi + 1).min(w));
            x[a..b].iter().sum::<f64>() / (b - a) as f64
        })
        .collect();
    if comp.noise_std > 0.0 {
        let noise = Normal::new(0.0, comp.noise_std).expect("finite");
        for v in &mut out {
            *v += noise.sample(rng);
        }
    }
    Ok(out)
}

/// Sample Pearson correlation; zero when either input is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Mean over axes of `|pearson(sensor 1 axis, sensor 2 axis)|` for one window.
pub fn window_abs_pearson(w: &TimeWindow) -> f64 {
    let axes = w.axes_per_sensor();
    (0..axes)
        .map(|a| pearson(&w.stream(a), &w.stream(axes + a)).abs())
        .sum::<f64>()
        / axes as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PearsonSummary {
    pub mean_abs: f64,
    pub std_abs: f64,
    pub windows: usize,
}

pub fn pearson_summary(windows: &[&TimeWindow]) -> PearsonSummary {
    let values: Vec<f64> = windows.iter().map(|w| window_abs_pearson(w)).collect();
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    PearsonSummary {
        mean_abs: mean,
        std_abs: var.sqrt(),
        windows: values.len(),
    }
}

fn class_rng(seed: u64, class: usize, split: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * class as u64 + split);
    rng
}

fn window<R: Rng + ?Sized>(
    config: &SyntheticConfig,
    table: &ComponentTable,
    class: usize,
    rng: &mut R,
) -> Result<TimeWindow> {
    let w = config.samples;
    let streams = SENSORS * AXES;
    let mut data = vec![0.0; w * streams];
    for axis in 0..AXES {
        let (s1, s2) = sample_correlated_base(config.class_variances[class], config.rho(), w, rng);
        for (sensor, base) in [s1, s2].iter().enumerate() {
            let comp = table.components(class, sensor, axis, config.setting);
            let y = add_components(base, &comp, rng)?;
            let col = sensor * AXES + axis;
            for (i, v) in y.into_iter().enumerate() {
                data[i * streams + col] = v;
            }
        }
    }
    Ok(TimeWindow::new(data, w, config.rate_hz, (0..SENSORS).collect(), AXES)?.labeled(class))
}

/// Generated splits plus the manifest describing them.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub info: DatasetInfo,
    pub pearson: PearsonSummary,
}

/// Generates the balanced train and test splits. Each class draws from its
/// own seeded stream, so classes are independent of generation order.
pub fn generate_dataset(config: &SyntheticConfig) -> Result<SyntheticData> {
    config.validate()?;
    let table = config.resolved_components()?;
    let mut splits = Vec::new();
    for (split, per_class, tag) in [("train", config.train_per_class, 0), ("test", config.test_per_class, 1)] {
        let mut windows = Vec::with_capacity(per_class * config.classes());
        for class in 0..config.classes() {
            let mut rng = class_rng(config.seed, class, tag);
            for _ in 0..per_class {
                windows.push(window(config, &table, class, &mut rng)?);
            }
        }
        splits.push(LabeledDataset::new(split, windows)?);
    }
    let test = splits.pop().expect("two splits");
    let train = splits.pop().expect("two splits");
    let all: Vec<&TimeWindow> = train.windows.iter().chain(&test.windows).collect();
    let pearson = pearson_summary(&all);
    let energy: Vec<f64> = (0..config.classes())
        .map(|c| {
            let var = config.class_variances[c];
            let e: f64 = (0..AXES)
                .map(|a| table.profiles[c][0][a].deterministic_energy(config.samples))
                .sum();
            e / AXES as f64 / var
        })
        .collect();
    let mut resolved = config.clone();
    resolved.components = Some(table);
    let info = DatasetInfo {
        schema_version: SCHEMA_VERSION,
        samples: config.samples,
        streams: SENSORS * AXES,
        rate_hz: config.rate_hz,
        duration_s: config.samples as f64 / config.rate_hz,
        axes_per_sensor: AXES,
        sensor_names: vec!["sensor1".into(), "sensor2".into()],
        class_names: (0..config.classes()).map(|c| format!("class{c}")).collect(),
        counts: [("test".to_string(), test.len()), ("train".to_string(), train.len())].into(),
        seed: config.seed,
        generator: serde_json::to_value(&resolved)?,
        statistics: serde_json::json!({
            "setting": config.setting.name(),
            "rho": config.rho(),
            "mutual_information_nats": gaussian_mutual_information(config.rho()),
            "mean_abs_pearson": pearson.mean_abs,
            "std_abs_pearson": pearson.std_abs,
            "component_energy_ratio": energy,
        }),
    };
    Ok(SyntheticData {
        train,
        test,
        info,
        pearson,
    })
}
