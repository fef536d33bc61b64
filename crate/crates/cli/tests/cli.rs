use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dwb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dwb")).args(args).output().expect("spawn dwb")
}

fn ok(args: &[&str]) -> Output {
    let out = dwb(args);
    assert!(
        out.status.success(),
        "dwb {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Two states, 20-step holds around a 40-step ramp, 40 samples per step.
fn small_synth(dir: &Path, seed: &str) -> (PathBuf, PathBuf) {
    let csv = dir.join(format!("toy{seed}.csv"));
    let truth = dir.join(format!("toy{seed}.truth.json"));
    ok(&[
        "synth",
        "-o",
        s(&csv),
        "--K",
        "2",
        "--d",
        "2",
        "--holds",
        "20,20",
        "--ramps",
        "40",
        "--seed",
        seed,
    ]);
    (csv, truth)
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("cfg.json");
    std::fs::write(
        &p,
        format!(r#"{{"k": 2, "window": {{"n": 19, "delta": 40}}, "mc_samples": 400, "estimator": {{"max_outer": 4}}{extra}}}"#),
    )
    .unwrap();
    p
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, ta) = small_synth(dir.path(), "5");
    let b = dir.path().join("again.csv");
    ok(&["synth", "-o", s(&b), "--K", "2", "--d", "2", "--holds", "20,20", "--ramps", "40", "--seed", "5"]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        std::fs::read(&ta).unwrap(),
        std::fs::read(dir.path().join("again.truth.json")).unwrap()
    );
    let truth = json(&ta);
    assert_eq!(truth["trajectory"].as_array().unwrap().len(), 80);
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().next().unwrap(), "t,y1,y2");
    assert_eq!(text.lines().count(), 1 + 80 * 40);
}

#[test]
fn synth_fit_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, truth) = small_synth(dir.path(), "3");
    let cfg = small_config(dir.path(), "");
    let fit = dir.path().join("fit.json");
    ok(&["fit", s(&csv), "-o", s(&fit), "--config", s(&cfg)]);
    let doc = json(&fit);
    assert_eq!(doc["kind"], "dwb_fit");
    assert_eq!(doc["seed"], 0);
    assert_eq!(doc["config"]["k"], 2);
    let trace: Vec<f64> = doc["cost_trace"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    assert_eq!(doc["trajectory"].as_array().unwrap().len(), 80);
    assert!(dir.path().join("fit.windows.csv").exists());

    let metrics = dir.path().join("metrics.json");
    ok(&["eval", "--fit", s(&fit), "--data", s(&csv), "--truth", s(&truth), "-o", s(&metrics)]);
    let m = json(&metrics);
    let entry = &m["entries"][0];
    for key in ["e_w", "e_nll"] {
        let a = entry["metrics"][key].as_f64().unwrap();
        let b = doc["metrics"][key].as_f64().unwrap();
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{key}: {a} vs {b}");
    }
    let mae = entry["state_mae"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&mae));
    assert_eq!(entry["theta_w2"].as_array().unwrap().len(), 2);
    let table = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(table.starts_with("fit,mode,e_w,e_nll,state_mae,theta_w2_mean\n"));
}

#[test]
fn embedded_config_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, _) = small_synth(dir.path(), "4");
    let cfg = small_config(dir.path(), r#", "seed": 11"#);
    let first = dir.path().join("first.json");
    ok(&["fit", s(&csv), "-o", s(&first), "--config", s(&cfg)]);
    let doc = json(&first);
    let echoed = dir.path().join("echo.json");
    std::fs::write(&echoed, serde_json::to_string(&doc["config"]).unwrap()).unwrap();
    let second = dir.path().join("second.json");
    ok(&["fit", s(&csv), "-o", s(&second), "--config", s(&echoed)]);
    let again = json(&second);
    assert_eq!(again["seed"], 11);
    assert_eq!(doc["metrics"], again["metrics"]);
    assert_eq!(doc["theta"], again["theta"]);
}

#[test]
fn gmm_mode_and_paired_table() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, truth) = small_synth(dir.path(), "6");
    let cfg = small_config(dir.path(), "");
    let a = dir.path().join("dwb.json");
    let b = dir.path().join("gmm.json");
    ok(&["fit", s(&csv), "-o", s(&a), "--config", s(&cfg), "--max-outer", "2"]);
    ok(&["fit", s(&csv), "-o", s(&b), "--config", s(&cfg), "--max-outer", "2", "--mode", "gmm"]);
    assert_eq!(json(&b)["config"]["mode"], "gmm");
    let out = dir.path().join("pair.json");
    ok(&["eval", "--fit", s(&a), "--fit", s(&b), "--data", s(&csv), "--truth", s(&truth), "-o", s(&out)]);
    let table = std::fs::read_to_string(dir.path().join("pair.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].contains(",dwb,") && rows[2].contains(",gmm,"));
}

#[test]
fn malformed_csv_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,b\n1,2\n3,4\n5,oops\n").unwrap();
    let out = dwb(&["fit", s(&bad), "-o", s(&dir.path().join("f.json"))]);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(msg.contains("line 4") && msg.contains("non-numeric"), "{msg}");

    std::fs::write(&bad, "a,b\n1,2\n3\n").unwrap();
    let msg = stderr(&dwb(&["fit", s(&bad), "-o", s(&dir.path().join("f.json"))]));
    assert!(msg.contains("line 3") && msg.contains("expected 2 fields"), "{msg}");
}

#[test]
fn short_series_is_insufficient() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("short.csv");
    std::fs::write(&p, "a,b\n0.1,2\n0.5,1\n0.2,7\n").unwrap();
    let out = dwb(&["fit", s(&p), "-o", s(&dir.path().join("f.json"))]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("insufficient samples"), "{}", stderr(&out));
    assert!(!dir.path().join("f.json").exists());
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, _) = small_synth(dir.path(), "1");
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"estimator": {"line_serch": {}}}"#).unwrap();
    let msg = stderr(&dwb(&["fit", s(&csv), "-o", "x.json", "--config", s(&cfg)]));
    assert!(msg.contains("line_serch"), "{msg}");
    std::fs::write(&cfg, r#"{"estimator": {"line_search": {"c": 2.0}}}"#).unwrap();
    let msg = stderr(&dwb(&["fit", s(&csv), "-o", "x.json", "--config", s(&cfg)]));
    assert!(msg.contains("line_search.c"), "{msg}");
}

#[test]
fn eval_rejects_dimension_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, _) = small_synth(dir.path(), "2");
    let cfg = small_config(dir.path(), "");
    let fit = dir.path().join("fit.json");
    ok(&["fit", s(&csv), "-o", s(&fit), "--config", s(&cfg), "--max-outer", "1"]);
    let other = dir.path().join("d3.csv");
    ok(&["synth", "-o", s(&other), "--K", "2", "--d", "3", "--holds", "20,20", "--ramps", "40"]);
    let out = dwb(&["eval", "--fit", s(&fit), "--data", s(&other), "-o", s(&dir.path().join("m.json"))]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("dimension mismatch"), "{}", stderr(&out));
}

#[test]
fn benchmark_table_and_budget_guard() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    ok(&["benchmark", "-o", s(&out), "--dims", "2", "--K", "2", "--repeats", "1"]);
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "d,K,repeat,geometry,iterations,wall_ms,final_cost");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("2,2,0,bures_wasserstein,"));
    assert!(lines[2].starts_with("2,2,0,euclidean_cholesky,"));

    let big = dwb(&["benchmark", "-o", s(&out), "--dims", "2,5,10,20,30", "--K", "2,3", "--repeats", "2"]);
    assert!(!big.status.success());
    assert!(stderr(&big).contains("--force"), "{}", stderr(&big));
}
