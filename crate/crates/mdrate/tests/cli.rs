use std::fs;
use std::path::Path;
use std::process::Command;

use mdrate::csvio::{read_path, write_path};
use serde_json::Value;

fn run(dir: &Path, config: &str, extra: &[&str]) -> (i32, std::path::PathBuf) {
    let cfg = dir.join("run.json");
    fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_mdrate"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .arg("--quiet")
        .args(extra)
        .status()
        .unwrap();
    (status.code().unwrap(), out)
}

fn summary(out: &Path) -> Value {
    serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn zero_path_has_zero_rate() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run(dir.path(), r#"{"command": "rate", "grid": {"horizon": 1.0, "steps": 50}}"#, &[]);
    assert_eq!(code, 0);
    let s = summary(&out);
    assert_eq!(s["status"], "ok");
    assert_eq!(s["results"]["rate"].as_f64().unwrap(), 0.0);
    assert!(s["version"].as_str().unwrap().starts_with('v'));
    assert!(out.join("adjoint.csv").is_file());
}

#[test]
fn malformed_config_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run(dir.path(), r#"{"command": "rate", "grid": {"steps": }"#, &[]);
    assert_eq!(code, 2);
    assert!(!out.exists());
    let (code, out) = run(dir.path(), r#"{"command": "rate", "grid": {"stepz": 5}}"#, &[]);
    assert_eq!(code, 2);
    assert!(!out.exists());
}

#[test]
fn mismatched_initial_value_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"command": "rate", "model": {"q0": 0.5}, "path": {"type": "polynomial", "coefficients": [0.0, 1.0]}}"#;
    let (code, out) = run(dir.path(), cfg, &[]);
    assert_eq!(code, 2);
    assert!(!out.exists());
}

#[test]
fn tolerance_failure_exits_1_with_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"command": "kiefer-check", "kiefer": {"x_steps": 8, "t_steps": 8}, "tolerances": {"kiefer_spot": 1e-14, "kiefer_energy": 1e-14}}"#;
    let (code, out) = run(dir.path(), cfg, &[]);
    assert_eq!(code, 1);
    let s = summary(&out);
    assert_eq!(s["status"], "numerical-failure");
    assert_eq!(s["exit_code"], 1);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"command": "simulate", "seed": 7,
        "simulation": {"ladder": [20, 200], "replications": 24, "export_traces": true,
                       "event": {"kind": "sup", "t": 1.0, "a": 0.3}}}"#;
    let (code, out) = run(dir.path(), cfg, &[]);
    assert_eq!(code, 0);
    let first: Vec<_> = ["summary.json", "lln.csv", "tail.csv", "trace_n20.csv"].iter().map(|f| fs::read(out.join(f)).unwrap()).collect();
    fs::remove_dir_all(&out).unwrap();
    let (code, out) = run(dir.path(), cfg, &[]);
    assert_eq!(code, 0);
    for (f, bytes) in ["summary.json", "lln.csv", "tail.csv", "trace_n20.csv"].iter().zip(&first) {
        assert_eq!(&fs::read(out.join(f)).unwrap(), bytes, "{f}");
    }
    let (_, out) = run(dir.path(), cfg, &["--seed", "8"]);
    assert_ne!(fs::read(out.join("lln.csv")).unwrap(), first[1]);
    assert_eq!(summary(&out)["seed"], 8);
}

#[test]
fn summary_reports_condition_value_per_ladder_entry() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"command": "simulate", "simulation": {"ladder": [16, 256], "replications": 4,
        "b_rule": {"rule": "power", "gamma": 0.1}}}"#;
    let (code, out) = run(dir.path(), cfg, &[]);
    assert_eq!(code, 0);
    let ladder = summary(&out)["results"]["ladder"].as_array().unwrap().clone();
    assert_eq!(ladder.len(), 2);
    for entry in ladder {
        let n = entry["n"].as_f64().unwrap();
        let b = n.powf(0.1);
        let expected = b.powi(3) * n.powf(1.0 / (b * b) - 0.5);
        assert!((entry["condition_value"].as_f64().unwrap() - expected).abs() <= 1e-12 * expected);
    }
}

#[test]
fn adjoint_csv_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run(dir.path(), r#"{"command": "rate", "path": {"type": "battery", "case": "hump"}}"#, &[]);
    assert_eq!(code, 0);
    let bytes = fs::read(out.join("adjoint.csv")).unwrap();
    let p = read_path(bytes.as_slice()).unwrap();
    let mut again = Vec::new();
    write_path(&mut again, &p).unwrap();
    assert_eq!(again, bytes);
}

#[test]
fn csv_path_input_matches_polynomial() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out) = run(dir.path(), r#"{"command": "rate", "path": {"type": "polynomial", "coefficients": [0.0, 0.3, -0.2]}}"#, &[]);
    assert_eq!(code, 0);
    let direct = summary(&out)["results"]["rate"].as_f64().unwrap();
    fs::copy(out.join("q.csv"), dir.path().join("q_in.csv")).unwrap();
    fs::remove_dir_all(&out).unwrap();
    let (code, out) = run(dir.path(), r#"{"command": "rate", "path": {"type": "csv", "file": "q_in.csv"}}"#, &[]);
    assert_eq!(code, 0);
    assert_eq!(summary(&out)["results"]["rate"].as_f64().unwrap(), direct);
}

#[test]
fn unwritable_output_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"command": "dist-info"}"#).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_mdrate"))
        .args(["--quiet", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(blocker.join("sub"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}
