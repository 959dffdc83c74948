use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::LevelFilter;

use dana::dataset::write_dataset;
use dana::experiments::{
    baseline_pipeline, load_data, model_spec, rows_to_csv, summarize, sweep, training_stats, ExperimentConfig,
};
use dana::gradcheck::run_gradcheck;
use dana::nn::{checkpoint, Classifier};
use dana::synth::generate_dataset;
use dana::training::{fit, TrainerKind};
use dana::{Error, Result};

#[derive(Parser)]
#[command(name = "dana", version, about = "Dimension-adaptive classifiers for sensor windows")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset into the output directory.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Replace a non-empty output directory.
        #[arg(long)]
        overwrite: bool,
    },
    /// Train a model and write a checkpoint plus a training report.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint over the rate x sensor grid.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        probes: usize,
        /// Also write the report as JSON into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split at native dimensions.
    Eval {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<(ExperimentConfig, Option<toml::Table>)> {
    let (mut cfg, raw) = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
            (ExperimentConfig::from_toml(&text)?, Some(raw))
        }
        None => (ExperimentConfig::default(), None),
    };
    let seed = common.seed.unwrap_or(cfg.seed);
    cfg = cfg.with_seed(seed);
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    Ok((cfg, raw))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn gen_data(common: &Common, overwrite: bool) -> Result<()> {
    let (cfg, _) = load_config(common)?;
    let data = generate_dataset(&cfg.data.synthetic)?;
    write_dataset(&cfg.out, &data.info, &[&data.train, &data.test], overwrite || cfg.overwrite)?;
    println!(
        "{} setting: mean |pearson| {:.4} (std {:.4}) over {} windows; {} train, {} test -> {}",
        cfg.data.synthetic.setting.name(),
        data.pearson.mean_abs,
        data.pearson.std_abs,
        data.pearson.windows,
        data.train.len(),
        data.test.len(),
        cfg.out.display()
    );
    Ok(())
}

fn train(common: &Common) -> Result<()> {
    let (cfg, raw) = load_config(common)?;
    let names_b = raw
        .as_ref()
        .and_then(|t| t.get("train"))
        .and_then(|t| t.get("batches_per_round"))
        .is_some();
    if cfg.train.trainer == TrainerKind::Standard && names_b {
        log::warn!("batches_per_round is ignored by the standard trainer");
    }
    let data = load_data(&cfg.data)?;
    cfg.validate(&data.info)?;
    let spec = model_spec(&cfg, &data.info)?;
    let model = Classifier::build(spec, cfg.seed)?;
    let (best, report) = fit(model, &data.train, &data.test, &cfg.train)?;
    fs::create_dir_all(&cfg.out)?;
    let meta = serde_json::json!({
        "trainer": report.trainer,
        "epochs_run": report.epochs.len(),
        "best_epoch": report.best_epoch,
        "best_val_accuracy": report.best_val_accuracy,
        "train_config": cfg.train,
    });
    checkpoint::save(&cfg.checkpoint_dir(), &best, cfg.seed, meta)?;
    write_json(&cfg.out.join("report.json"), &report)?;
    println!(
        "{} / {}: {} epochs, best validation accuracy {:.4} at epoch {} ({} parameters)",
        report.model,
        report.trainer,
        report.epochs.len(),
        report.best_val_accuracy,
        report.best_epoch,
        report.parameter_count
    );
    Ok(())
}

fn run_sweep(common: &Common) -> Result<()> {
    let (cfg, _) = load_config(common)?;
    let (model, manifest) = checkpoint::load(&cfg.checkpoint_dir())?;
    let data = load_data(&cfg.data)?;
    cfg.validate(&data.info)?;
    let pipeline = match (&cfg.baseline, model.spec.adaptive) {
        (Some(b), false) => {
            let stats = training_stats(&data.train)?;
            Some(baseline_pipeline(&model.spec, &data.info, b.imputation, Some(stats))?)
        }
        _ => None,
    };
    let trainer = manifest.training["trainer"].as_str().unwrap_or("unknown").to_string();
    let rows = sweep(&model, pipeline.as_ref(), &data.test, &cfg.sweep, &trainer, cfg.seed)?;
    let summary = summarize(&rows);
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("sweep.csv"), rows_to_csv(&rows))?;
    write_json(
        &cfg.out.join("sweep_summary.json"),
        &serde_json::json!({ "summary": summary, "rows": rows }),
    )?;
    println!(
        "{} cells ({} failed): accuracy min {:.4} mean {:.4} max {:.4}",
        summary.cells, summary.failures, summary.min_accuracy, summary.mean_accuracy, summary.max_accuracy
    );
    Ok(())
}

fn gradcheck(seed: u64, probes: usize, out: Option<&Path>) -> Result<bool> {
    let report = run_gradcheck(seed, probes)?;
    for c in &report.checks {
        println!(
            "{:<24} {} max rel error {:.3e} (tol {:.0e}, {} probes)",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.max_rel_error,
            c.tolerance,
            c.probes
        );
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("gradcheck.json"), &report)?;
    }
    Ok(report.passed)
}

fn eval(common: &Common) -> Result<()> {
    let (cfg, _) = load_config(common)?;
    let (model, _) = checkpoint::load(&cfg.checkpoint_dir())?;
    let data = load_data(&cfg.data)?;
    let e = model.evaluate(&data.test.refs())?;
    let value = serde_json::json!({
        "model": model.spec.name,
        "accuracy": e.accuracy,
        "loss": e.loss,
        "count": e.count,
        "per_class": e.per_class,
    });
    fs::create_dir_all(&cfg.out)?;
    write_json(&cfg.out.join("eval.json"), &value)?;
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { LevelFilter::Info } else { LevelFilter::Warn })
        .init();
    let result = match &cli.command {
        Command::GenData { common, overwrite } => gen_data(common, *overwrite),
        Command::Train { common } => train(common),
        Command::Sweep { common } => run_sweep(common),
        Command::Gradcheck { seed, probes, out } => match gradcheck(*seed, *probes, out.as_deref()) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
        Command::Eval { common } => eval(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
