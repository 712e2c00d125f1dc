//! End-to-end checks of the command-line binary on small configurations.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const TINY: &str = r#"{
    "dgp": { "n_replications": 1, "n_referenda": 400 },
    "turnout_dgp": { "n_replications": 1, "n_referenda": 1500 },
    "turnout_draws": 2,
    "extrap": { "grid_points": 5, "outer_draws": 2, "inner_draws": 2 }
}"#;

fn sxrd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sxrd")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn stderr_json(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("error JSON on stderr");
    serde_json::from_str(line).unwrap()
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> =
        fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())).collect();
    files.sort();
    files
}

#[test]
fn default_config_validates_clean() {
    let o = sxrd(&["validate-config", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["valid"], true);
}

#[test]
fn single_jurisdiction_fails_counting_rule() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"seed": 1, "dgp": {"n_jurisdictions": 1}}"#);
    let o = sxrd(&["identify", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    let paths: Vec<&str> = e["error"]["errors"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    assert!(paths.contains(&"dgp.n_jurisdictions"));
}

#[test]
fn config_errors_exit_two_with_field_paths() {
    let tmp = TempDir::new().unwrap();
    let neg = write_config(tmp.path(), "neg.json", r#"{"seed": 1, "extrap": {"bin_width": -0.005}}"#);
    let o = sxrd(&["validate-config", "--config", neg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["errors"][0]["path"], "extrap.bin_width");

    let typo = write_config(tmp.path(), "typo.json", r#"{"seed": 1, "dgp": {"n_referenda": "lots"}}"#);
    let o = sxrd(&["simulate", "--config", typo.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["error"]["kind"], "parse");
    assert_eq!(e["error"]["errors"][0]["path"], "dgp.n_referenda");

    let broken = write_config(tmp.path(), "broken.json", "{ not json");
    assert_eq!(sxrd(&["simulate", "--config", broken.to_str().unwrap()]).status.code(), Some(2));

    let o = sxrd(&["simulate", "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "a seed is mandatory");
}

#[test]
fn reruns_are_byte_identical_and_sidecar_reproduces() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", TINY);
    let run = |out: &str, seed: &str, extra: &[&str]| {
        let out = tmp.path().join(out);
        let mut args = vec!["simulate", "--config", cfg.to_str().unwrap(), "--seed", seed, "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        assert_eq!(sxrd(&args).status.code(), Some(0));
        out
    };
    let a = run("a", "11", &[]);
    let b = run("b", "11", &["--threads", "1"]);
    assert_eq!(read_dir_sorted(&a), read_dir_sorted(&b));

    let c = tmp.path().join("c");
    let o = sxrd(&["simulate", "--config", a.join("config.json").to_str().unwrap(), "--out", c.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(read_dir_sorted(&a), read_dir_sorted(&c));

    let d = run("d", "12", &[]);
    assert_ne!(fs::read(a.join("records.csv")).unwrap(), fs::read(d.join("records.csv")).unwrap());
}

#[test]
fn outputs_embed_hash_and_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", TINY);
    let out = tmp.path().join("o");
    assert_eq!(sxrd(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "5", "--out", out.to_str().unwrap()]).status.code(), Some(0));
    let meta: Value = serde_json::from_str(&fs::read_to_string(out.join("dataset.json")).unwrap()).unwrap();
    let hash = meta["meta"]["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    assert_eq!(meta["meta"]["seed"], 5);
    let csv = fs::read_to_string(out.join("records.csv")).unwrap();
    let first = csv.lines().next().unwrap();
    assert!(first.starts_with('#') && first.contains(&hash) && first.contains("seed=5"));
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(csv.as_bytes());
    assert_eq!(reader.records().count(), 400);
}

#[test]
fn rescaled_cutoff_effect_is_reduced_form_over_first_stage() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", r#"{"dgp": {"n_replications": 1, "n_referenda": 1500}}"#);
    let out = tmp.path().join("o");
    let o = sxrd(&["estimate-rdd", "--config", cfg.to_str().unwrap(), "--seed", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("rdd_estimates.csv")).unwrap();
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let mut rows = 0;
    for r in reader.deserialize::<std::collections::HashMap<String, String>>() {
        let r = r.unwrap();
        let f = |k: &str| r[k].parse::<f64>().unwrap();
        assert!((f("wave") - f("ate") / f("first_stage")).abs() <= 1e-12 * f("wave").abs().max(1.0));
        rows += 1;
    }
    assert!(rows >= 4);
}

#[test]
fn reproduce_tables_reports_deltas() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", TINY);
    let out = tmp.path().join("o");
    let o = sxrd(&["reproduce-tables", "--config", cfg.to_str().unwrap(), "--seed", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let structural = s["data"]["structural"].as_array().unwrap();
    assert_eq!(structural.len(), 9);
    for row in structural {
        let (t, e, d) = (row["truth"].as_f64().unwrap(), row["estimate"].as_f64().unwrap(), row["delta"].as_f64().unwrap());
        assert!((e - t - d).abs() < 1e-12);
    }
    assert_eq!(s["data"]["turnout"].as_array().unwrap().len(), 9);
    for f in ["table2.csv", "table3.csv", "ave_curve.csv", "margin_by_grid.csv", "plot_data.json", "config.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}
