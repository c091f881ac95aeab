//! End-to-end runs of the command-line tool on a tiny configuration.

mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::tiny_config;
use shapebias::harness::{ExperimentConfig, Regime, RunReport, SuiteSpec, CACHE_ENV};

fn shapebias(cache: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shapebias")).env(CACHE_ENV, cache).args(args).output().expect("binary runs")
}

fn ok(out: Output) -> (String, String) {
    let stdout = String::from_utf8(out.stdout).unwrap();
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(out.status.success(), "stdout:\n{stdout}\nstderr:\n{stderr}");
    (stdout, stderr)
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> String {
    let p = dir.join("tiny.toml");
    fs::write(&p, cfg.to_toml()).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn gen_data_and_stylize() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tiny_config());
    let data = tmp.path().join("data");
    let styled = tmp.path().join("styled");
    let (out, _) = ok(shapebias(
        tmp.path(),
        &["gen-data", "--config", &cfg, "--out", data.to_str().unwrap(), "--cue-conflict", "8"],
    ));
    assert!(out.contains("wrote 20 samples"), "{out}");
    assert!(out.contains("wrote 8 cue-conflict samples"), "{out}");
    assert!(data.join("manifest.csv").is_file());
    assert!(data.join("cue_conflict/manifest.csv").is_file());

    let (out, _) = ok(shapebias(
        tmp.path(),
        &["stylize", "--config", &cfg, "--input", data.to_str().unwrap(), "--out", styled.to_str().unwrap()],
    ));
    assert!(out.contains("wrote 20 stylized samples"), "{out}");
    let manifest = fs::read_to_string(styled.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 21);
}

#[test]
fn train_evaluate_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("runs");
    let cfg = write_config(tmp.path(), &tiny_config());

    let (out, err) = ok(shapebias(&cache, &["train", "--config", &cfg]));
    assert!(err.contains("[base] epoch   1"), "{err}");
    assert!(out.contains("shape bias"), "{out}");
    let run_dir = out.lines().find_map(|l| l.strip_prefix("run directory")).unwrap().trim().to_string();
    assert!(Path::new(&run_dir).join("report.json").is_file());
    assert!(Path::new(&run_dir).starts_with(&cache));

    let (_, err) = ok(shapebias(&cache, &["train", "--config", &cfg]));
    assert!(!err.contains("epoch"), "a cached run retrained:\n{err}");

    let (out, _) = ok(shapebias(&cache, &["evaluate", "--config", &cfg]));
    assert!(out.contains("matches stored report: yes"), "{out}");

    let data = tmp.path().join("data");
    ok(shapebias(&cache, &["gen-data", "--config", &cfg, "--out", data.to_str().unwrap()]));
    let (out, _) = ok(shapebias(&cache, &["evaluate", "--config", &cfg, "--data", data.to_str().unwrap(), "--k", "1"]));
    assert!(out.contains("top1") && out.contains("(n = 20)"), "{out}");

    let csv = tmp.path().join("table.csv");
    let svg = tmp.path().join("chart.svg");
    let (out, _) =
        ok(shapebias(&cache, &["report", &run_dir, "--csv", csv.to_str().unwrap(), "--svg", svg.to_str().unwrap()]));
    assert!(out.contains("base"), "{out}");
    let table = fs::read_to_string(&csv).unwrap();
    assert_eq!(table.lines().count(), 2, "{table}");
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn seed_and_regime_flags_select_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tiny_config());
    let (out, _) =
        ok(shapebias(tmp.path(), &["--seed", "5", "train", "--config", &cfg, "--regime", "dann", "--lambda", "0.5"]));
    assert!(out.contains("regime         dann (ResNet, seed 5)"), "{out}");
    assert!(out.contains("lambda         0.5"), "{out}");
    assert!(out.contains("domain acc"), "{out}");

    let expected = ExperimentConfig { seed: 5, ..tiny_config().with_regime(Regime::Dann, Some(0.5)) };
    let run_dir = out.lines().find_map(|l| l.strip_prefix("run directory")).unwrap().trim().to_string();
    let report: RunReport =
        serde_json::from_str(&fs::read_to_string(Path::new(&run_dir).join("report.json")).unwrap()).unwrap();
    assert_eq!(report.seed, 5);
    assert_eq!(report.config_hash, expected.hash());
}

#[test]
fn f64_gradcheck_runs_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tiny_config().with_regime(Regime::Dann, Some(0.5)));
    let (_, err) = ok(shapebias(tmp.path(), &["--f64-gradcheck", "--threads", "2", "train", "--config", &cfg]));
    for name in ["conv2d stride 2 padding 1", "grad_reverse", "ResNet classifier", "ResNet dann"] {
        assert!(err.contains(&format!("gradcheck {name}:")), "missing {name}:\n{err}");
    }
    let check = err.find("gradcheck").unwrap();
    let first_epoch = err.find("epoch").unwrap();
    assert!(check < first_epoch);
}

#[test]
fn suite_writes_results() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = SuiteSpec {
        regimes: vec![Regime::Base, Regime::Mixed, Regime::Dann],
        seeds: vec![0],
        lambda: Some(0.5),
        lambda_search: None,
        template: tiny_config(),
    };
    let path = tmp.path().join("suite.toml");
    fs::write(&path, spec.to_toml()).unwrap();
    let out_dir = tmp.path().join("out");
    let (out, _) = ok(shapebias(
        &tmp.path().join("runs"),
        &["suite", "--spec", path.to_str().unwrap(), "--out", out_dir.to_str().unwrap()],
    ));
    assert!(out.contains("median over seeds"), "{out}");
    let csv = fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4, "{csv}");
    let dann = csv.lines().find(|l| l.contains(",dann,")).unwrap();
    assert!(dann.contains("%)"), "{dann}");
    assert!(out_dir.join("chart.svg").is_file());
    assert!(out_dir.join("results.txt").is_file());
}

#[test]
fn errors_exit_with_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "max_epochs = \"many\"\n").unwrap();
    let out = shapebias(tmp.path(), &["train", "--config", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let cfg = write_config(tmp.path(), &tiny_config());
    let out = shapebias(&tmp.path().join("empty"), &["evaluate", "--config", &cfg]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no cached result"), "{:?}", out);

    let out = shapebias(tmp.path(), &["report"]);
    assert!(!out.status.success());
}
