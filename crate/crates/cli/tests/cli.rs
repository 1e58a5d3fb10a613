//! End-to-end tests of the `coevolve` binary: exit codes, determinism across
//! thread counts, and artifact contracts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_coevolve")
}

fn run_with_threads(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(bin());
    cmd.args(args);
    match threads {
        Some(t) => {
            cmd.env("COEVOLVE_THREADS", t);
        }
        None => {
            cmd.env_remove("COEVOLVE_THREADS");
        }
    }
    cmd.output().expect("binary runs")
}

fn run(args: &[&str]) -> Output {
    run_with_threads(args, None)
}

fn write_config(dir: &Path, name: &str, out_dir: &Path, body: &str) -> PathBuf {
    let text = body.replace("OUT_DIR", &out_dir.display().to_string());
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

const SMALL_RUN: &str = r#"
[system]
kernel = "flow:kuramoto:linear:1:cos"

[graphon]
family = "product"

[initial]
profile = "sin_2pi"

[grid]
t_end = 0.5
steps = 200

[run]
sizes = [16]
seed = 42

[output]
dir = "OUT_DIR"
"#;

fn manifest_field(out_dir: &Path, field: &str) -> String {
    let text = std::fs::read_to_string(out_dir.join("manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v[field].as_str().unwrap().to_string()
}

#[test]
fn run_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), "run.toml", &out, SMALL_RUN);

    let first = run_with_threads(&["run", config.to_str().unwrap()], Some("1"));
    assert!(first.status.success(), "{first:?}");
    let csv1 = std::fs::read(out.join("trajectories_N16.csv")).unwrap();
    let svg1 = std::fs::read(out.join("envelope_N16.svg")).unwrap();
    let hash1 = manifest_field(&out, "content_hash");

    let second = run_with_threads(&["run", config.to_str().unwrap()], Some("4"));
    assert!(second.status.success(), "{second:?}");
    let csv2 = std::fs::read(out.join("trajectories_N16.csv")).unwrap();
    let svg2 = std::fs::read(out.join("envelope_N16.svg")).unwrap();
    let hash2 = manifest_field(&out, "content_hash");

    assert_eq!(csv1, csv2, "trajectory CSV bytes must not depend on threads");
    assert_eq!(svg1, svg2, "plot bytes must not depend on threads");
    assert_eq!(hash1, hash2, "manifest content hash must not depend on threads");
}

#[test]
fn malformed_config_exits_2_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[system\nkernel = ").unwrap();
    let result = run(&["run", config.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2), "{result:?}");
    assert!(!out.exists(), "no artifacts on config error");
    assert!(!result.stderr.is_empty());
}

#[test]
fn unknown_key_is_reported_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let body = SMALL_RUN.replace("seed = 42", "seed = 42\nmystery = 1");
    let config = write_config(dir.path(), "unknown.toml", &out, &body);
    let result = run(&["run", config.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("mystery"), "stderr: {stderr}");
    assert!(stderr.contains("line"), "stderr: {stderr}");
}

#[test]
fn missing_config_file_exits_2() {
    let result = run(&["run", "/nonexistent/config.toml"]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn bad_thread_env_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = write_config(dir.path(), "run.toml", &out, SMALL_RUN);
    let result = run_with_threads(&["run", config.to_str().unwrap()], Some("many"));
    assert_eq!(result.status.code(), Some(2), "{result:?}");
}

#[test]
fn diverging_system_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");

    // Two oscillators pinned at phase difference pi (sin = 0 freezes the
    // states, cos = -1 drives the saturating weights), with initial weights
    // outside the invariant band so they blow up in finite time.
    let mut buf = Vec::new();
    let nodes = coevolve_core::graphon::uniform_nodes(2).unwrap();
    coevolve_core::graphon::WeightMatrix::new(2, vec![3.0; 4], nodes)
        .unwrap()
        .write_csv(&mut buf)
        .unwrap();
    std::fs::write(dir.path().join("w.csv"), &buf).unwrap();

    let body = r#"
[system]
kernel = "flow:kuramoto:saturating:cos"

[graphon]
step_csv = "w.csv"

[initial]
profile = "poly:0:6.283185307179586"

[grid]
t_end = 2.0
steps = 200

[run]
sizes = [2]
seed = 1

[output]
dir = "OUT_DIR"
"#;
    let config = write_config(dir.path(), "diverge.toml", &out, body);
    let result = run(&["run", config.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(3), "{result:?}");
}

#[test]
fn verify_passes_honestly_and_detects_halved_constant() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let body = SMALL_RUN
        .replace("t_end = 0.5", "t_end = 1.0")
        .replace("steps = 200", "steps = 100");
    let config = write_config(dir.path(), "verify.toml", &out, &body);

    let honest = run(&["verify", config.to_str().unwrap()]);
    assert!(honest.status.success(), "{honest:?}");
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("verify_report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["trials"].as_array().unwrap().len(), 24);
    assert_eq!(report["violations"], 0);

    let halved = run(&["verify", config.to_str().unwrap(), "--override", "L_K=0.5"]);
    assert_eq!(halved.status.code(), Some(4), "{halved:?}");
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.join("verify_report.json")).unwrap(),
    )
    .unwrap();
    assert!(report["violations"].as_u64().unwrap() >= 1);
    assert_eq!(report["l_k_factor"], 0.5);

    let bad_override = run(&["verify", config.to_str().unwrap(), "--override", "L_Q=1"]);
    assert_eq!(bad_override.status.code(), Some(2));
}

#[test]
fn study_writes_table_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let body = SMALL_RUN.replace("sizes = [16]", "sizes = [4, 8, 16]");
    let config = write_config(dir.path(), "study.toml", &out, &body);
    let result = run(&["study", config.to_str().unwrap()]);
    assert!(result.status.success(), "{result:?}");
    let csv = std::fs::read_to_string(out.join("study.csv")).unwrap();
    assert!(csv.starts_with("N,dist_to_limit,dist_successive\n"));
    assert_eq!(csv.lines().count(), 3);
    assert!(out.join("study.svg").exists());

    // A study needs at least three sizes.
    let body = SMALL_RUN.replace("sizes = [16]", "sizes = [4, 8]");
    let config = write_config(dir.path(), "study2.toml", &out, &body);
    let result = run(&["study", config.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn plot_renders_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("points.csv");
    std::fs::write(&csv, "N,dist\n8,0.5\n16,0.25\n").unwrap();
    let result = run(&["plot", csv.to_str().unwrap(), "--kind", "loglog"]);
    assert!(result.status.success(), "{result:?}");
    let svg = std::fs::read_to_string(dir.path().join("points.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 1);

    // Byte-stable across invocations, including through --out.
    let out2 = dir.path().join("again.svg");
    let result = run(&[
        "plot",
        csv.to_str().unwrap(),
        "--kind",
        "loglog",
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert!(result.status.success());
    assert_eq!(std::fs::read(&out2).unwrap(), std::fs::read(dir.path().join("points.svg")).unwrap());

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "N,dist\n").unwrap();
    let result = run(&["plot", empty.to_str().unwrap(), "--kind", "loglog"]);
    assert_eq!(result.status.code(), Some(2));

    let result = run(&["plot", csv.to_str().unwrap(), "--kind", "pie"]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn bound_subcommand_prints_frozen_values() {
    let result = run(&[
        "bound", "dobrushin", "--lk", "1", "--lw", "2", "--d0", "1", "--t", "1",
    ]);
    assert!(result.status.success(), "{result:?}");
    let v: f64 = String::from_utf8_lossy(&result.stdout).trim().parse().unwrap();
    assert!((v - 41.79881339297344).abs() <= 1e-10, "got {v}");

    // At t = 0 the bound collapses to sqrt(2) * max(1, L_W) * 2 * d0.
    let result = run(&[
        "bound", "dobrushin", "--lk", "5", "--lw", "0.5", "--d0", "0.1", "--t", "0",
    ]);
    let v: f64 = String::from_utf8_lossy(&result.stdout).trim().parse().unwrap();
    assert!((v - 0.282842712474619).abs() <= 1e-12, "got {v}");

    let result = run(&[
        "bound",
        "dobrushin-nonlip",
        "--lk",
        "1",
        "--di0",
        "0.3",
        "--wl1",
        "0",
        "--t",
        "0",
    ]);
    let v: f64 = String::from_utf8_lossy(&result.stdout).trim().parse().unwrap();
    assert!((v - 0.6).abs() <= 1e-15, "got {v}");

    let result = run(&[
        "bound", "flow", "--lk", "1", "--lw", "1", "--dzeta", "1", "--dx", "0", "--t", "1",
    ]);
    let v: f64 = String::from_utf8_lossy(&result.stdout).trim().parse().unwrap();
    assert!((v - std::f64::consts::E).abs() <= 1e-12, "got {v}");
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    for name in [
        "kuramoto_flow.toml",
        "study_deterministic.toml",
        "study_sampled.toml",
        "verify.toml",
    ] {
        let path = root.join("configs").join(name);
        let text = std::fs::read_to_string(&path).unwrap();
        coevolve::config::Experiment::from_toml(&text, path.parent().unwrap())
            .unwrap_or_else(|e| panic!("config {name} must parse: {e}"));
    }
}
