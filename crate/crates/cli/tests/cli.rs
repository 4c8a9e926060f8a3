//! End-to-end behaviour of the `nlflow` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nlflow"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn value(v: &Value) -> f64 {
    v["value"].as_f64().expect("tagged float")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_default_config_passes_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("default.conf");
    let start = Instant::now();
    let o = run(&["validate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(start.elapsed().as_secs_f64() < 10.0);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = report(dir.path());
    assert_eq!(r["status"], "pass");
    assert!(value(&r["operator"]["banded_vs_dense"]) <= 1e-12);
    assert!(dir.path().join("timings.json").is_file());
}

#[test]
fn config_errors_exit_2_and_list_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["run", "--out", out, "--set", "kernel.s=2.5", "--set", "kernel.lamda=4"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("order out of (0,2)"), "{e}");
    assert!(e.contains("kernel.lamda") && e.contains("kernel.lambda"), "{e}");
    assert!(!dir.path().join("report.json").exists());

    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "kernel.s = 1\nthis line is wrong\n").unwrap();
    let o = run(&["run", "--config", bad.to_str().unwrap(), "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"));

    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_abort_exits_3_with_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["run", "--out", dir.path().to_str().unwrap(), "--set", "flow.dt=10"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let r = report(dir.path());
    assert_eq!(r["status"], "aborted");
    assert!(r["error"].as_str().unwrap().contains("unstable"));
    assert_eq!(r["config"]["flow.dt"]["source"], "flag");
}

#[test]
fn run_reports_are_byte_identical_and_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let args = [
        "run",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "1..4",
        "--set",
        "kernel.family=rough-static",
        "--set",
        "output.fields=true",
        "--set",
        "initial.shape=step",
    ];
    let read_all = |p: &Path| {
        let mut v = Vec::new();
        for name in ["report.json", "curves/seed-3.csv", "fields/seed-2-final.csv"] {
            v.push(std::fs::read(p.join(name)).unwrap());
        }
        v
    };
    assert_eq!(run(&args).status.code(), Some(0));
    let first = read_all(&out);
    let o = bin().args(args).env("NLFLOW_THREADS", "1").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(read_all(&out), first);
    let r = report(&out);
    assert_eq!(r["runs"].as_array().unwrap().len(), 4);
    assert_eq!(r["config"]["ensemble.seeds"]["source"], "flag");

    let o = bin().args(args).env("NLFLOW_THREADS", "zero").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

fn write_step_csv(path: &Path, m: usize) {
    let text: String = (0..m).map(|i| if (m / 4..3 * m / 4).contains(&i) { "1\n" } else { "0\n" }).collect();
    std::fs::write(path, text).unwrap();
}

fn denoise(input: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "denoise".to_string(),
        "--out".into(),
        out.display().to_string(),
        "--set".into(),
        format!("denoise.input={}", input.display()),
    ];
    for e in extra {
        args.push("--set".into());
        args.push(e.to_string());
    }
    bin().args(&args).output().unwrap()
}

#[test]
fn denoise_binary_step_signal() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("step.csv");
    write_step_csv(&input, 256);
    let out = dir.path().join("huber");
    let o = denoise(&input, &out, &["potential.family=smoothed-huber", "denoise.time=0.1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = report(&out);
    let d = &r["denoise"];
    assert!(value(&d["output"]["min"]) >= 0.0 && value(&d["output"]["max"]) <= 1.0);
    assert!(value(&d["energy"]["final"]) < value(&d["energy"]["initial"]));
    assert!(out.join("fields/denoised.csv").is_file());
    assert!(out.join("curves/denoise-energy.csv").is_file());
}

#[test]
fn quadratic_denoise_equals_linear_flow() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("step.csv");
    write_step_csv(&input, 128);
    let a = dir.path().join("quadratic");
    let b = dir.path().join("linear");
    assert_eq!(denoise(&input, &a, &["grid.M=128", "potential.family=quadratic"]).status.code(), Some(0));
    assert_eq!(denoise(&input, &b, &["grid.M=128", "potential.family=linear"]).status.code(), Some(0));
    assert_eq!(
        std::fs::read(a.join("fields/denoised.csv")).unwrap(),
        std::fs::read(b.join("fields/denoised.csv")).unwrap()
    );
}

#[test]
fn constant_image_is_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("white.pgm");
    let mut bytes = b"P5\n64 64\n255\n".to_vec();
    bytes.extend(std::iter::repeat_n(200u8, 64 * 64));
    std::fs::write(&input, &bytes).unwrap();
    let out = dir.path().join("o");
    let cfg = configs().join("denoise.conf");
    let o = bin()
        .args(["denoise", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .args(["--set", &format!("denoise.input={}", input.display())])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read(out.join("fields/denoised.pgm")).unwrap(), bytes);
}

#[test]
fn diagnose_small_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("ensemble.conf");
    let o = run(&[
        "diagnose",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "1..20",
        "--set",
        "grid.M=256",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = report(dir.path());
    let seeds = r["seeds_diagnosis"].as_array().unwrap();
    assert_eq!(seeds.len(), 20);
    for s in seeds {
        assert!(s["lemma1"]["verdict"]["verdict"].is_string());
        assert_eq!(s["energies"].as_array().unwrap().len(), 6);
    }
    let osc = r["oscillation"].as_array().unwrap();
    assert_eq!(osc.len(), 20);
    assert!(osc.iter().all(|o| o["report"]["alpha"]["value"].is_number()));
    assert_eq!(r["calibration"]["source"], "inline");
    assert_eq!(r["calibration"]["constants"]["eps0"]["provenance"], "calibrated");
}

#[test]
fn calibration_file_feeds_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("ensemble.conf");
    let cal = dir.path().join("cal");
    let o = run(&["calibrate", "--config", cfg.to_str().unwrap(), "--seed", "1..6", "--out", cal.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let file = cal.join("calibration.json");
    assert!(file.is_file());
    let diag = dir.path().join("diag");
    let o = run(&[
        "diagnose",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "7,8",
        "--set",
        &format!("diagnose.calibration={}", file.display()),
        "--out",
        diag.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = report(&diag);
    assert_eq!(r["calibration"]["source"], "file");
    assert_eq!(r["calibration"]["matches_ensemble"], true);
}
