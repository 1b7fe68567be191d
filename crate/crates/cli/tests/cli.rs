use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ifecmle"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ifecmle-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Gaussian panel with one regressor, slope 1 and factor effects.
fn write_linear(dir: &Path, n: usize, t: usize) -> PathBuf {
    let mut text = String::from("unit,time,y,x1\n");
    for i in 0..n {
        let a = 0.5 + (i as f64 * 0.37).fract();
        for s in 0..t {
            let g = 0.5 + (s as f64 * 0.61).fract();
            let x = (i as f64 * 7.1 + s as f64 * 3.3).sin();
            let e = 0.5 * (i as f64 * 13.7 + s as f64 * 5.9).sin();
            text.push_str(&format!("id{i},{},{},{x}\n", s + 1, x + a * g + e));
        }
    }
    let path = dir.join("linear.csv");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(cmd: &mut Command) -> (Output, Option<Value>) {
    let out = cmd.output().unwrap();
    let doc = serde_json::from_slice(&out.stdout).ok();
    (out, doc)
}

fn error_kind(out: &Output) -> String {
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    v["error"]["kind"].as_str().unwrap().to_string()
}

#[test]
fn fit_reports_estimates_and_resolved_config() {
    let dir = scratch("fit");
    let data = write_linear(&dir, 12, 10);
    let (out, doc) = run(bin().args(["fit", "--model", "linear:sigma=0.5", "--data"]).arg(&data));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = doc.unwrap();
    assert_eq!(doc["schema"], 1);
    assert_eq!(doc["config"]["correct"], "analytic");
    assert_eq!(doc["config"]["trim"], 0);
    assert_eq!(doc["n_units"], 12);
    let beta = doc["estimate"]["beta"][0].as_f64().unwrap();
    let (lo, hi) = (doc["estimate"]["ci_lower"][0].as_f64().unwrap(), doc["estimate"]["ci_upper"][0].as_f64().unwrap());
    assert!(lo < beta && beta < hi);
    assert!((beta - 1.0).abs() < 0.3, "{beta}");
    assert_eq!(doc["fit"]["alpha"][0]["label"], "id0");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = scratch("rerun");
    let data = write_linear(&dir, 10, 8);
    let args = ["fit", "--model", "linear:sigma=1", "--correct", "jackknife", "--splits", "3", "--seed", "5", "--data"];
    let a = bin().args(args).arg(&data).output().unwrap();
    let b = bin().args(args).arg(&data).output().unwrap();
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let doc: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(doc["estimate"]["details"]["subfits"], 8);
}

#[test]
fn spectrum_has_one_null_eigenvalue() {
    let dir = scratch("spectrum");
    let data = write_linear(&dir, 8, 7);
    let (out, doc) = run(bin().args(["fit", "--model", "linear:sigma=1", "--dump-hessian-spectrum", "--data"]).arg(&data));
    assert!(out.status.success());
    let ev: Vec<f64> = doc.unwrap()["hessian_spectrum"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(ev.len(), 15);
    assert!(ev[0].abs() < 1e-10 && ev[1] > 1e-6);
}

#[test]
fn ape_variance_effect() {
    let dir = scratch("ape");
    let data = write_linear(&dir, 10, 10);
    let (out, doc) = run(bin().args(["ape", "--model", "linear:sigma=1", "--effect", "variance", "--correct", "none", "--data"]).arg(&data));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let est = &doc.unwrap()["estimate"];
    assert_eq!(est["delta"], est["delta_uncorrected"]);
    assert!(est["se"].as_f64().unwrap() > 0.0);
}

#[test]
fn error_classes_have_distinct_exit_codes() {
    let dir = scratch("errors");
    let data = write_linear(&dir, 6, 5);
    let conflict = bin().args(["fit", "--model", "probit", "--correct", "none", "--trim", "2", "--data"]).arg(&data).output().unwrap();
    assert_eq!(conflict.status.code(), Some(3));
    assert_eq!(error_kind(&conflict), "conflict");

    let missing = bin().args(["fit", "--model", "probit", "--data"]).arg(dir.join("absent.csv")).output().unwrap();
    assert_eq!(missing.status.code(), Some(4));

    let support = bin().args(["fit", "--model", "poisson", "--data"]).arg(&data).output().unwrap();
    assert_eq!(support.status.code(), Some(5));
    assert_eq!(error_kind(&support), "data");

    let family = bin().args(["fit", "--model", "tobit", "--data"]).arg(&data).output().unwrap();
    assert_eq!(family.status.code(), Some(2));
    let flag = bin().args(["fit", "--unknown-flag"]).output().unwrap();
    assert_eq!(flag.status.code(), Some(2));

    let effect = bin().args(["ape", "--model", "linear:sigma=1", "--effect", "binary:k=3", "--data"]).arg(&data).output().unwrap();
    assert_eq!(effect.status.code(), Some(2));
}

#[test]
fn panel_without_variation_is_an_estimation_failure() {
    let dir = scratch("separation");
    let mut text = String::from("unit,time,y,x\n");
    for i in 0..6 {
        for t in 0..5 {
            let x = ((i * 7 + t * 3) % 5) as f64 * 0.4 - 0.8;
            let y = u8::from((i * 3 + t * 5 + i * t) % 3 != 0);
            text.push_str(&format!("{i},{t},{y},{x}\n"));
        }
    }
    let data = dir.join("sep.csv");
    std::fs::write(&data, text).unwrap();
    let out = bin().args(["fit", "--model", "probit", "--data"]).arg(&data).output().unwrap();
    assert_eq!(out.status.code(), Some(6));
    assert_eq!(error_kind(&out), "estimation");
}

#[test]
fn simulate_writes_both_tables_and_config_file_matches_flags() {
    let dir = scratch("simulate");
    let t1 = dir.join("table1.csv");
    let flags = bin()
        .args(["simulate", "--dgp", "linear-nonreg", "--N", "8,6", "--T", "6,8", "--reps", "6", "--splits", "2", "--seed", "4", "--out"])
        .arg(&t1)
        .output()
        .unwrap();
    assert!(flags.status.success(), "{}", String::from_utf8_lossy(&flags.stderr));
    let table1 = std::fs::read_to_string(&t1).unwrap();
    let table2 = std::fs::read_to_string(dir.join("table1_coverage.csv")).unwrap();
    // (6, 8) has T > N and is skipped
    assert_eq!(table1.lines().next().unwrap(), "statistic,N=6 T=6,N=8 T=6,N=8 T=8");
    assert_eq!(table1.lines().count(), 9);
    assert_eq!(table2.lines().count(), 4);

    let doc: Value = serde_json::from_slice(&flags.stdout).unwrap();
    let config = dir.join("cells.json");
    std::fs::write(&config, serde_json::to_string(&doc["config"]["cells"]).unwrap()).unwrap();
    let file = bin().args(["simulate", "--config"]).arg(&config).output().unwrap();
    assert!(file.status.success(), "{}", String::from_utf8_lossy(&file.stderr));
    assert_eq!(file.stdout, flags.stdout);

    let both = bin().args(["simulate", "--dgp", "probit", "--config"]).arg(&config).output().unwrap();
    assert_eq!(both.status.code(), Some(3));
}

#[test]
fn oracle_check_agrees() {
    let (out, doc) = run(bin().args(["oracle-check", "--N", "9", "--T", "7", "--seed", "2"]));
    assert!(out.status.success());
    let doc = doc.unwrap();
    assert_eq!(doc["agree"], true);
    assert!(doc["max_product_diff"].as_f64().unwrap() < 1e-6);
}
