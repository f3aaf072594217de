use std::path::PathBuf;
use std::process::Command;

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str], cfg: &str, out: &std::path::Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_hicontrast"))
        .args(args)
        .arg("--config")
        .arg(config(cfg))
        .arg("--out")
        .arg(out)
        .status()
        .expect("binary runs")
        .code()
        .unwrap_or(-1)
}

fn summary(out: &std::path::Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn bands_start_at_discriminant_two_and_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&["bands"], "unit.toml", &a), 0);
    assert_eq!(run(&["bands"], "unit.toml", &b), 0);
    let csv_a = std::fs::read_to_string(a.join("bands.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read_to_string(b.join("bands.csv")).unwrap());
    let mut rows = csv::Reader::from_path(a.join("bands.csv")).unwrap();
    assert_eq!(rows.headers().unwrap(), vec!["lambda", "discriminant"]);
    let first = rows.records().next().unwrap().unwrap();
    assert_eq!(first[0].parse::<f64>().unwrap(), 0.0);
    assert_eq!(first[1].parse::<f64>().unwrap(), 2.0);
    let s = summary(&a);
    assert!(s["gaps"].as_array().unwrap().len() >= 2);
    let m: Value = serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["deterministic"], Value::Bool(true));
    assert_eq!(m["command"], Value::String("bands".into()));
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(run(&["bands", "--set", "geometry.h=1.5"], "unit.toml", out), 2);
    assert_eq!(run(&["decay"], "unit.toml", out), 2);
    assert_eq!(run(&["bands", "--eps-list", "2^-3..x"], "unit.toml", out), 2);
    assert_eq!(run(&["bands"], "missing.toml", out), 2);
    assert_eq!(run(&["bands", "--set", "geometry"], "unit.toml", out), 2);
}

#[test]
fn module_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    // band 9 is not resolved below λ = 50
    let code = run(&["dispersion", "--bands", "9", "--lambda-max", "50"], "unit.toml", dir.path());
    assert_eq!(code, 1);
}

#[test]
fn lambda_rate_table_has_six_rows_and_slope() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["rates", "--quantity", "lambda_eps"], "gap_tuned.toml", dir.path()), 0);
    let mut rd = csv::Reader::from_path(dir.path().join("rates.csv")).unwrap();
    assert_eq!(rd.headers().unwrap(), vec!["epsilon", "lambda_eps", "lambda0", "error"]);
    assert_eq!(rd.records().count(), 6);
    assert!(summary(dir.path())["slope"].as_f64().unwrap() >= 0.7);
}

#[test]
fn oracle_check_agrees() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["oracle-check"], "gap_tuned.toml", dir.path()), 0);
    let s = summary(dir.path());
    assert!(s["max_abs_disagreement"].as_f64().unwrap() < 1e-6);
    assert_eq!(s["one_to_one"], Value::Bool(true));
}

#[test]
fn defect_eps_writes_eigenfunction_and_ratios() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["defect-eps", "--set", "epsilon=0.05"], "gap_tuned.toml", dir.path()), 0);
    for f in ["defect_modes.csv", "eigenfunction.csv", "period_ratios.csv", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let mut rd = csv::Reader::from_path(dir.path().join("period_ratios.csv")).unwrap();
    assert!(rd.records().count() >= 16);
}
