//! End-to-end tests of the `aopt` binary: spec parsing, exit codes, output
//! schemas, and round-trip exactness.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn aopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aopt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, contents: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path.to_string_lossy().into_owned()
}

fn paid_spec() -> &'static str {
    r#"{
      "model": {"family": "bernoulli", "link": "logit", "beta": [0.0, 3.0, 3.0, 3.0]},
      "predictor": [
        {"type": "intercept"},
        {"type": "linear", "factor": 1},
        {"type": "indicator", "factor": 2, "level": 1.0},
        {"type": "indicator", "factor": 2, "level": 2.0}
      ],
      "candidates": [[0,0],[0,1],[0,2],[1,0],[1,1],[1,2]]
    }"#
}

fn logistic_spec() -> &'static str {
    r#"{
      "model": {"family": "bernoulli", "link": "logit", "beta": [-2.0, 0.5]},
      "predictor": [{"type": "intercept"}, {"type": "linear", "factor": 1}],
      "space": {"factors": [{"kind": "continuous", "lower": 0.0, "upper": 10.0}]}
    }"#
}

#[test]
fn liftone_emits_paid_research_design() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.json", paid_spec());
    let output = aopt(&["liftone", "--spec", &spec]);
    assert!(output.status.success());
    let document: Value = serde_json::from_slice(&output.stdout).unwrap();
    let weights: Vec<f64> = document["weights"]
        .as_array()
        .unwrap()
        .iter()
        .map(|w| w.as_f64().unwrap())
        .collect();
    let expected = [0.2208, 0.2597, 0.2597, 0.2597, 0.0, 0.0];
    for (w, e) in weights.iter().zip(expected) {
        assert!((w - e).abs() <= 5e-4, "weights {weights:?}");
    }
    assert_eq!(document["method"], "liftone");
    assert_eq!(document["certified"], true);
}

#[test]
fn saturated_specs_note_the_method() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "spec.json",
        r#"{
          "model": {"family": "bernoulli", "link": "logit", "beta": [0.3, -0.7]},
          "predictor": [{"type": "intercept"}, {"type": "linear", "factor": 1}],
          "candidates": [[-1.0], [2.0]]
        }"#,
    );
    let output = aopt(&["liftone", "--spec", &spec]);
    assert!(output.status.success());
    let document: Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(document["method"], "saturated");
}

#[test]
fn malformed_spec_exits_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "spec.json",
        // "candidattes" is misspelled.
        r#"{
          "model": {"family": "bernoulli", "link": "logit", "beta": [0.0, 1.0]},
          "predictor": [{"type": "intercept"}, {"type": "linear", "factor": 1}],
          "candidattes": [[0.0], [1.0]]
        }"#,
    );
    let output = aopt(&["liftone", "--spec", &spec]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("candidattes"), "stderr: {stderr}");
    assert!(output.stdout.is_empty());
}

#[test]
fn unbounded_factor_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "spec.json",
        r#"{
          "model": {"family": "bernoulli", "link": "logit", "beta": [-2.0, 0.5]},
          "predictor": [{"type": "intercept"}, {"type": "linear", "factor": 1}],
          "space": {"factors": [{"kind": "continuous", "lower": 0.0}]}
        }"#,
    );
    let output = aopt(&["forlion", "--spec", &spec]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("upper"), "stderr: {stderr}");
}

#[test]
fn round_paid_research_to_exact_allocation() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.json", paid_spec());
    let design_path = dir.path().join("design.json").to_string_lossy().into_owned();
    assert!(aopt(&["liftone", "--spec", &spec, "--out", &design_path])
        .status
        .success());

    let output = aopt(&["round", "--design", &design_path, "--n", "200"]);
    assert!(output.status.success());
    let document: Value = serde_json::from_slice(&output.stdout).unwrap();
    let counts: Vec<u64> = document["counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_u64().unwrap())
        .collect();
    assert_eq!(counts, vec![44, 52, 52, 52, 0, 0]);

    let zero = aopt(&["round", "--design", &design_path, "--n", "0"]);
    assert_eq!(zero.status.code(), Some(2));
}

#[test]
fn round_single_point_design() {
    let dir = tempfile::tempdir().unwrap();
    let design = write(
        dir.path(),
        "design.json",
        r#"{
          "model": {"family": "bernoulli", "link": "logit", "beta": [0.5]},
          "predictor": [{"type": "linear", "factor": 1}],
          "points": [[2.0]],
          "weights": [1.0],
          "h": 0.1,
          "certified": true,
          "iterations": 0,
          "seed": 0,
          "method": "argmax_point"
        }"#,
    );
    let output = aopt(&["round", "--design", &design, "--n", "7"]);
    assert!(output.status.success());
    let document: Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(document["counts"].as_array().unwrap().len(), 1);
    assert_eq!(document["counts"][0].as_u64(), Some(7));
}

#[test]
fn forlion_and_verify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.json", logistic_spec());
    let design_path = dir.path().join("design.json").to_string_lossy().into_owned();
    let trace_path = dir.path().join("trace.csv").to_string_lossy().into_owned();
    let output = aopt(&[
        "forlion",
        "--spec",
        &spec,
        "--delta",
        "0.3",
        "--epsilon",
        "1e-6",
        "--out",
        &design_path,
        "--trace",
        &trace_path,
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    let document: Value =
        serde_json::from_str(&std::fs::read_to_string(&design_path).unwrap()).unwrap();
    let points: Vec<f64> = document["points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x[0].as_f64().unwrap())
        .collect();
    assert_eq!(points.len(), 2);
    let low = points.iter().cloned().fold(f64::INFINITY, f64::min);
    let high = points.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!((low - 0.2542).abs() <= 0.05 && (high - 7.7459).abs() <= 0.05);

    let trace = std::fs::read_to_string(&trace_path).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("iter,h,m_t,phi_star,alpha_t"));
    assert!(lines.next().is_some());

    let verify = aopt(&["verify", "--design", &design_path, "--spec", &spec, "--grid", "501"]);
    assert!(verify.status.success());
    let report: Value = serde_json::from_slice(&verify.stdout).unwrap();
    assert_eq!(report["certified"], true);
    assert!(report["slack"].as_f64().unwrap() <= 1e-6);
}

/// Emitted designs re-parse to bit-identical weights and points.
#[test]
fn design_json_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.json", paid_spec());
    let first = aopt(&["liftone", "--spec", &spec]);
    assert!(first.status.success());
    let document: Value = serde_json::from_slice(&first.stdout).unwrap();
    let reserialized = serde_json::to_string_pretty(&document).unwrap();
    let reparsed: Value = serde_json::from_str(&reserialized).unwrap();
    for key in ["weights", "points", "h"] {
        assert_eq!(document[key], reparsed[key], "field {key} drifted");
    }
    // The parsed weights are exactly the binary's in-memory outputs: feeding
    // the document back through `round` reproduces the allocation computed
    // from the in-memory design.
    let design_path = write(dir.path(), "design.json", &reserialized);
    let rounded = aopt(&["round", "--design", &design_path, "--n", "200"]);
    assert!(rounded.status.success());
    let exact: Value = serde_json::from_slice(&rounded.stdout).unwrap();
    let counts: Vec<u64> = exact["counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_u64().unwrap())
        .collect();
    assert_eq!(counts, vec![44, 52, 52, 52, 0, 0]);
}

#[test]
fn simulate_emits_study_csv() {
    let dir = tempfile::tempdir().unwrap();
    let study = write(
        dir.path(),
        "study.json",
        r#"{
          "model": {"family": "bernoulli", "link": "logit", "beta": [0.0, 3.0, 3.0, 3.0]},
          "predictor": [
            {"type": "intercept"},
            {"type": "linear", "factor": 1},
            {"type": "indicator", "factor": 2, "level": 1.0},
            {"type": "indicator", "factor": 2, "level": 2.0}
          ],
          "population": {
            "points": [[0,0],[0,1],[0,2],[1,0],[1,1],[1,2]],
            "sizes": [500, 400, 100, 2000, 1500, 500]
          },
          "n": 200,
          "samplers": [
            {"kind": "a_optimal"},
            {"kind": "proportional"},
            {"kind": "uniform"},
            {"kind": "srswor"}
          ],
          "reps": 3,
          "seed": 7
        }"#,
    );
    let output = aopt(&["simulate", "--study", &study]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let csv = String::from_utf8(output.stdout).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "replication,sampler,rmse_b0,rmse_rest,ce");
    assert_eq!(lines.len(), 1 + 3 * 4);
    assert!(lines[1].starts_with("0,a_optimal,"));
}

#[test]
fn seed_env_fallback_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(dir.path(), "spec.json", paid_spec());
    let output = Command::new(env!("CARGO_BIN_EXE_aopt"))
        .args(["liftone", "--spec", &spec, "--init", "random"])
        .env("AOPT_SEED", "31415")
        .output()
        .unwrap();
    assert!(output.status.success());
    let document: Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(document["seed"].as_u64(), Some(31415));
}
