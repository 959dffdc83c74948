use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn dana(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dana")).args(args).output().unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let text = format!(
        "seed = 5\nout = \"{out}\"\n[data]\ndir = \"{data}\"\n[data.synthetic]\ntrain_per_class = 20\ntest_per_class = 6\n[train]\nepochs = 2\nbatch_size = 10\n{extra}",
        out = dir.join("run").display(),
        data = dir.join("data").display(),
    );
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let data = tmp.path().join("data");
    let out = dana(&["gen-data", "--config", &cfg, "--out", data.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("pearson"));

    let again = dana(&["gen-data", "--config", &cfg, "--out", data.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(2));
    let forced = dana(&["gen-data", "--config", &cfg, "--out", data.to_str().unwrap(), "--overwrite"]);
    assert!(forced.status.success());

    for cmd in ["train", "sweep", "eval"] {
        let out = dana(&[cmd, "--config", &cfg]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let run = tmp.path().join("run");
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["epochs"].as_array().unwrap().len(), 2);
    assert_eq!(report["trainer"], "dat");
    let csv = fs::read_to_string(run.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 16);
    assert!(run.join("sweep_summary.json").exists());
    assert!(run.join("eval.json").exists());
    assert!(run.join("checkpoint").join("manifest.json").exists());
}

#[test]
fn seed_override_changes_the_data() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(dana(&["gen-data", "--config", &cfg, "--out", a.to_str().unwrap(), "--seed", "1"]).status.success());
    assert!(dana(&["gen-data", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "2"]).status.success());
    assert_ne!(fs::read(a.join("train.f64")).unwrap(), fs::read(b.join("train.f64")).unwrap());
}

#[test]
fn standard_trainer_warns_about_rounds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "trainer = \"standard\"\nbatches_per_round = 3\n");
    assert!(dana(&["gen-data", "--config", &cfg, "--out", tmp.path().join("data").to_str().unwrap()]).status.success());
    let out = dana(&["train", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batches_per_round is ignored"));
}

#[test]
fn gradcheck_passes_and_writes_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = dana(&["gradcheck", "--probes", "20", "--out", tmp.path().to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(!text.contains("FAIL"));
    assert!(tmp.path().join("gradcheck.json").exists());
}

#[test]
fn malformed_config_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "seed = \"x\"").unwrap();
    let out = dana(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
