use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn pracstab(args: &[&str], cfg: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pracstab"))
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn analyze_identity_gives_unit_radius() {
    let dir = tempfile::tempdir().unwrap();
    let out = pracstab(&["analyze"], &config("identity.json"), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cert = json(&dir.path().join("certificate.json"));
    assert!((cert["c_star"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(cert["s_star"], 1);
    let verdict = &cert["oracle_verdict"];
    assert_eq!(verdict["bracket_valid"], true);
    assert!(verdict["c_lower"].as_f64().unwrap() <= 1.0 && verdict["c_upper"].as_f64().unwrap() >= 1.0);
    assert!(!dir.path().join("surface.csv").exists());
}

#[test]
fn verify_rotation_is_stable_with_empty_violations() {
    let dir = tempfile::tempdir().unwrap();
    let out = pracstab(&["verify"], &config("rotation_verify.json"), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&dir.path().join("report.json"));
    assert_eq!(report["stable"], true);
    assert_eq!(report["violations"].as_array().unwrap().len(), 0);
    let csv = fs::read_to_string(dir.path().join("violations.csv")).unwrap();
    assert_eq!(csv, "x0_1,x0_2,t,constraint,excess\n");
}

#[test]
fn verify_reports_violations_beyond_unit_radius() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc: Value = serde_json::from_str(&fs::read_to_string(config("rotation_verify.json")).unwrap()).unwrap();
    doc["initial_set"]["radius"] = 1.1.into();
    let cfg = dir.path().join("wide.json");
    fs::write(&cfg, doc.to_string()).unwrap();
    let out = pracstab(&["verify", "--samples", "50"], &cfg, &dir.path().join("out"));
    assert!(out.status.success());
    let report = json(&dir.path().join("out/report.json"));
    assert_eq!(report["stable"], false);
    let csv = fs::read_to_string(dir.path().join("out/violations.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert!(!rows.is_empty());
    for row in rows {
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields.len(), 5);
        assert_eq!(fields[3], "1");
        assert!(fields[4].parse::<f64>().unwrap() > 0.0);
    }
}

#[test]
fn nominal_violation_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = pracstab(&["analyze"], &config("nominal_violation.json"), dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("linstab::NominalViolation"), "{err}");
    assert!(err.contains("s = 1"), "{err}");
    assert!(!dir.path().join("certificate.json").exists());
}

#[test]
fn invalid_config_exits_with_3_and_lists_every_issue() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(
        &cfg,
        r#"{
          "system": {"kind": "linear", "n": 2, "A": [[[0.0], [1.0]], [[-1.0], [0.0]]], "t0": 1.0, "T": 1.0},
          "constraints": {"kind": "linear", "l": [[[1.0], [0.0]]]},
          "initial_set": {"kind": "ball", "center": [0.0, 0.0, 0.0], "free": true}
        }"#,
    )
    .unwrap();
    let out = pracstab(&["analyze"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("config::HorizonError"), "{err}");
    assert!(err.contains("config::DimensionMismatch") && err.contains("/initial_set/center"), "{err}");

    fs::write(&cfg, "{\"system\": 3}").unwrap();
    let out = pracstab(&["analyze"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config::SchemaError"));
}

#[test]
fn grid_override_and_surface() {
    let dir = tempfile::tempdir().unwrap();
    let out = pracstab(
        &["analyze", "--grid", "101", "--samples", "50", "--emit-surface"],
        &config("damped_rotation.json"),
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cert = json(&dir.path().join("certificate.json"));
    assert_eq!(cert["grid_size"], 101);
    assert_eq!(cert["oracle_verdict"]["samples"], 50);
    let surface = fs::read_to_string(dir.path().join("surface.csv")).unwrap();
    let mut lines = surface.lines();
    assert_eq!(lines.next(), Some("t,s,ratio"));
    // 101 nodes, two constraints.
    assert_eq!(lines.count(), 202);
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn outputs_are_byte_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let runs = [("a", None), ("b", None), ("c", Some("1")), ("d", Some("3"))];
    for (name, threads) in runs {
        for (cmd, cfg) in [("analyze", "damped_rotation.json"), ("verify", "star_table_verify.json")] {
            let mut c = Command::new(env!("CARGO_BIN_EXE_pracstab"));
            c.args([cmd, "--samples", "80", "--grid", "201", "--emit-surface", "--config"])
                .arg(config(cfg))
                .arg("--out")
                .arg(dir.path().join(name).join(cmd));
            if let Some(t) = threads {
                c.env("PRACSTAB_THREADS", t);
            }
            let out = c.output().unwrap();
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        }
    }
    for cmd in ["analyze", "verify"] {
        let first = tree(&dir.path().join("a").join(cmd));
        assert!(!first.is_empty());
        for other in ["b", "c", "d"] {
            assert_eq!(first, tree(&dir.path().join(other).join(cmd)), "{cmd} output differs in run {other}");
        }
    }
}

#[test]
fn lyapunov_trace_is_constant_along_the_flow() {
    for cfg in ["cascade_trace.json", "time_varying_trace.json"] {
        let dir = tempfile::tempdir().unwrap();
        let out = pracstab(&["lyapunov-trace"], &config(cfg), dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let csv = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        let mut lines = csv.lines();
        let header = lines.next().unwrap();
        assert!(header == "t,V,max_increase" || header == "t,W,max_increase", "{header}");
        let rows: Vec<Vec<f64>> =
            lines.map(|l| l.split(',').map(|f| f.parse().unwrap()).collect()).collect();
        assert!(rows.len() > 10);
        let v0 = rows[0][1];
        for r in &rows {
            assert!((r[1] - v0).abs() < 1e-9, "{cfg}: {} vs {v0}", r[1]);
            assert!(r[2] < 1e-9);
        }
    }
}

#[test]
fn trace_without_section_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = pracstab(&["lyapunov-trace"], &config("rotation_verify.json"), dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/trace"));
}

#[test]
fn sweep_tracks_stiffness() {
    let dir = tempfile::tempdir().unwrap();
    let out = pracstab(&["sweep"], &config("stiffness_sweep.json"), dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("value,c_star,t_star,s_star,status"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    let c: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(rows.iter().all(|r| r[4] == "ok"));
    // Undamped harmonic case: orthogonal flow, c* = 1.
    assert!((c[1] - 1.0).abs() < 1e-9);
    // Past zero stiffness the flow is unstable and c* shrinks monotonically.
    assert!(c[3] > c[4] && c[4] > c[5]);
}

#[test]
fn unsupported_analysis_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = pracstab(&["analyze"], &config("cascade_trace.json"), dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cli::Unsupported"));
}
