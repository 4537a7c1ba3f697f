//! End-to-end tests of the `cmvsde` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cmvsde"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap()
}

fn repo_config(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", name].iter().collect();
    p.to_string_lossy().into_owned()
}

fn no_observation(dir: &Path) -> String {
    write(
        dir,
        "none.json",
        &json!({
            "scenario": {"name": "no-observation"},
            "grid": {"horizon": 1.0, "n_steps": 10},
            "sim": {"n_particles": 100, "master_seed": 0}
        })
        .to_string(),
    )
}

#[test]
fn solve_tiny_config_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&["solve", "--config", &no_observation(dir.path()), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["report.json", "measure_path.jsonl", "quantiles.csv", "y_path.csv", "ess.csv", "ensemble_summary.csv"] {
        let text = std::fs::read_to_string(out.join(f)).unwrap();
        assert!(text.contains("config_hash"), "{f} lacks provenance");
    }
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["converged"], json!(true));
    assert_eq!(report["provenance"]["master_seed"], json!(0));
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", "{ not json");
    assert_eq!(code(&run(&["solve", "--config", &cfg, "--out", dir.path().to_str().unwrap()])), 3);
    let unknown = write(
        dir.path(),
        "unknown.json",
        r#"{"scenario": {"name": "nope"}, "grid": {"horizon": 1, "n_steps": 4}, "sim": {"n_particles": 4, "master_seed": 0}}"#,
    );
    assert_eq!(code(&run(&["solve", "--config", &unknown])), 3);
}

#[test]
fn missing_config_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    assert_eq!(code(&run(&["solve", "--config", missing.to_str().unwrap()])), 4);
}

#[test]
fn non_convergence_has_its_own_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "strict.json",
        &json!({
            "scenario": {"name": "meanfield-tanh"},
            "grid": {"horizon": 1.0, "n_steps": 20},
            "sim": {"n_particles": 200, "master_seed": 1},
            "fixed_point": {"tol": 1e-300, "max_iter": 2}
        })
        .to_string(),
    );
    let out = dir.path().join("out");
    assert_eq!(code(&run(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()])), 5);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], json!(false));
}

#[test]
fn usage_errors() {
    assert_eq!(code(&run(&["oracle", "unknown", "--config", "x.json"])), 2);
    assert_eq!(code(&run(&["diagnose", "--config", "x.json", "--checks", "bogus"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn w1_between_files() {
    let dir = tempfile::tempdir().unwrap();
    let d0 = write(dir.path(), "d0.jsonl", r#"{"atoms": [0.0], "weights": [1.0]}"#);
    let d1 = write(dir.path(), "d1.jsonl", r#"{"atoms": [1.0], "weights": [1.0]}"#);
    let o = run(&["w1", &d0, &d1]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout_json(&o)["w1"], json!(1.0));
    assert_eq!(stdout_json(&run(&["w1", &d0, &d0]))["w1"], json!(0.0));
    assert_eq!(code(&run(&["w1", &d0, &write(dir.path(), "bad.jsonl", "[")])), 3);
}

#[test]
fn w1_between_solve_outputs_is_nodewise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = no_observation(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&run(&["solve", "--config", &cfg, "--out", a.to_str().unwrap()])), 0);
    assert_eq!(code(&run(&["solve", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "9"])), 0);
    let o = run(&["w1", a.join("measure_path.jsonl").to_str().unwrap(), b.join("measure_path.jsonl").to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let v = stdout_json(&o);
    let nodewise = v["nodewise"].as_array().unwrap();
    assert_eq!(nodewise.len(), 11);
    assert_eq!(nodewise[0], json!(0.0));
    assert!(v["sup"].as_f64().unwrap() > 0.0);
    // a single measure cannot be compared with a path
    let d0 = write(dir.path(), "d0.jsonl", r#"{"atoms": [0.0], "weights": [1.0]}"#);
    assert_eq!(code(&run(&["w1", &d0, a.join("measure_path.jsonl").to_str().unwrap()])), 7);
}

#[test]
fn seed_override_changes_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = no_observation(dir.path());
    let out = dir.path().join("o");
    run(&["solve", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "42"]);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["provenance"]["master_seed"], json!(42));
}

#[test]
fn tree_oracle_matches_enumerated_solve() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("tree");
    let cfg = repo_config("tree.json");
    let o = out.to_str().unwrap();
    assert_eq!(code(&run(&["solve", "--config", &cfg, "--out", o])), 0);
    let paired = out.join("measure_path.jsonl");
    let r = run(&["oracle", "tree", "--config", &cfg, "--out", o, "--paired", paired.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(stdout_json(&r)["sup_w1"].as_f64().unwrap() <= 1e-12);
}

#[test]
fn oracle_with_missing_paired_output_fails() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing.jsonl");
    let o = run(&[
        "oracle", "tree", "--config", &repo_config("tree.json"),
        "--out", dir.path().to_str().unwrap(), "--paired", missing.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 4);
}

#[test]
fn kalman_oracle_reports_rmse() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "lc.json",
        &json!({
            "scenario": {"name": "linear-clipped"},
            "grid": {"horizon": 1.0, "n_steps": 50},
            "sim": {"n_particles": 20000, "master_seed": 3},
            "fixed_point": {"tol": 1e-6, "max_iter": 5}
        })
        .to_string(),
    );
    let out = dir.path().join("k");
    let o = out.to_str().unwrap();
    assert_eq!(code(&run(&["solve", "--config", &cfg, "--out", o])), 0);
    let paired = out.join("measure_path.jsonl");
    let r = run(&["oracle", "kalman", "--config", &cfg, "--out", o, "--paired", paired.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let v = stdout_json(&r);
    assert_eq!(v["valid"], json!(true));
    assert!(v["mean_rmse"].as_f64().unwrap() < 0.05);
    assert!(v["variance_relative_rmse"].as_f64().unwrap() < 0.1);
    assert!(out.join("kalman.csv").exists());
    // the Kalman oracle applies to one scenario only
    assert_eq!(code(&run(&["oracle", "kalman", "--config", &no_observation(dir.path()), "--out", o])), 7);
}

#[test]
fn martingale_check_on_zero_h_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "diagnose", "--config", &no_observation(dir.path()), "--checks", "martingale",
        "--out", dir.path().join("d").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let rep: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("d/diag_martingale.json")).unwrap()).unwrap();
    assert_eq!(rep["verdict"], json!("PASS"));
}

#[test]
fn continuity_with_one_replication_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        &json!({
            "scenario": {"name": "meanfield-tanh"},
            "grid": {"horizon": 1.0, "n_steps": 16},
            "sim": {"n_particles": 50, "master_seed": 0},
            "diagnostics": {"continuity_replications": 1}
        })
        .to_string(),
    );
    let o = run(&["diagnose", "--config", &cfg, "--checks", "continuity", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 7);
    assert!(String::from_utf8_lossy(&o.stderr).contains("insufficient replications"));
}

#[test]
fn y_path_override_pins_the_observation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "m.json",
        &json!({
            "scenario": {"name": "meanfield-tanh"},
            "grid": {"horizon": 0.5, "n_steps": 10},
            "sim": {"n_particles": 200, "master_seed": 4}
        })
        .to_string(),
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&run(&["solve", "--config", &cfg, "--out", a.to_str().unwrap()])), 0);
    let y = a.join("y_path.csv");
    let r = run(&["solve", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "4", "--y-path", y.to_str().unwrap()]);
    assert_eq!(code(&r), 0);
    let data = |d: &Path| -> Vec<String> {
        std::fs::read_to_string(d.join("measure_path.jsonl")).unwrap().lines().skip(1).map(str::to_owned).collect()
    };
    assert_eq!(data(&a), data(&b));
    // a Y file on a different grid is rejected
    let short = write(dir.path(), "short.csv", "t,y\n0,0\n0.5,0.1\n");
    assert_eq!(code(&run(&["solve", "--config", &cfg, "--out", b.to_str().unwrap(), "--y-path", &short])), 7);
}

#[test]
fn full_suite_passes_on_shipped_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["diagnose", "--config", &repo_config("meanfield-tanh.json"), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}
