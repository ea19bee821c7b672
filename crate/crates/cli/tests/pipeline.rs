use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn gmrgp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmrgp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn gmrgp")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = gmrgp(dir, args);
    assert!(
        out.status.success(),
        "gmrgp {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn letter_model(dir: &Path) {
    ok(dir, &["generate", "--kind", "letter", "--count", "5", "--samples", "60", "--seed", "3", "--out", "demos.csv"]);
    ok(
        dir,
        &[
            "fit", "--demos", "demos.csv", "--components", "5", "--seed", "1", "--starts", "2", "--max-evals", "40",
            "--max-points", "60", "--out", "model.json",
        ],
    );
}

/// Rows of a trajectory CSV as (x, means) with `d` output columns.
fn means(csv: &str, d: usize) -> Vec<Vec<f64>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').take(1 + d).map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn fit_adapt_predict_pulls_the_mean_through_the_via_point() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    letter_model(dir);
    std::fs::write(dir.join("via.json"), r#"{"via_points": [{"input": [1.0], "output": [4.0, 4.0], "noise": 1e-6}]}"#)
        .unwrap();
    ok(dir, &["adapt", "--model", "model.json", "--via", "via.json", "--out", "adapted.json"]);
    ok(dir, &["predict", "--model", "adapted.json", "--grid", "0:2:0.25", "--out", "post.csv"]);
    ok(dir, &["predict", "--model", "model.json", "--grid", "0:2:0.25", "--out", "prior.csv"]);

    let post = means(&read(dir, "post.csv"), 2);
    let prior = means(&read(dir, "prior.csv"), 2);
    assert_eq!(post.len(), 9);
    let at_via = &post[4];
    assert_eq!(at_via[0], 1.0);
    assert!((at_via[1] - 4.0).abs() < 0.01 && (at_via[2] - 4.0).abs() < 0.01, "{at_via:?}");
    let far = (prior[4][1] - 4.0).hypot(prior[4][2] - 4.0);
    assert!(far > 0.1, "via-point should differ from the prior mean, distance {far}");
}

#[test]
fn predict_without_via_points_matches_the_gmr_export() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(dir, &["generate", "--kind", "minjerk", "--count", "4", "--samples", "50", "--seed", "2", "--out", "demos.json"]);
    ok(
        dir,
        &[
            "fit", "--demos", "demos.json", "--components", "3", "--lengthscale", "0.7", "--noise", "1e-4", "--out",
            "model.json",
        ],
    );
    ok(dir, &["predict", "--model", "model.json", "--grid", "0:5:0.5", "--out", "gp.csv"]);
    ok(dir, &["predict", "--model", "model.json", "--grid", "0:5:0.5", "--method", "gmr", "--out", "gmr.csv"]);
    let gp = means(&read(dir, "gp.csv"), 2);
    let gmr = means(&read(dir, "gmr.csv"), 2);
    assert_eq!(gp.len(), 11);
    for (a, b) in gp.iter().zip(&gmr) {
        for (u, v) in a.iter().zip(b) {
            assert!((u - v).abs() <= 1e-12 * v.abs().max(1.0), "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn malformed_via_json_reports_a_parse_error() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(dir, &["generate", "--kind", "minjerk", "--count", "3", "--samples", "30", "--out", "demos.csv"]);
    ok(dir, &["fit", "--demos", "demos.csv", "--components", "2", "--lengthscale", "1", "--out", "model.json"]);
    std::fs::write(dir.join("via.json"), "[{\"input\": [1.0], \"output\": ").unwrap();
    let out = gmrgp(dir, &["adapt", "--model", "model.json", "--via", "via.json", "--out", "adapted.json"]);
    assert!(!out.status.success());
    let payload: serde_json::Value = serde_json::from_slice(&out.stderr).expect("JSON error payload");
    assert_eq!(payload["error"], "ParseError");
    assert!(payload["message"].as_str().is_some_and(|m| !m.is_empty()));
    assert!(!dir.join("adapted.json").exists());
}

#[test]
fn missing_model_file_fails_with_an_io_error() {
    let tmp = TempDir::new().unwrap();
    let out = gmrgp(tmp.path(), &["predict", "--model", "nope.json", "--grid", "0:1:0.5", "--out", "p.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let payload: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(payload["error"], "Io");
}

#[test]
fn pipelines_are_deterministic_given_seeds() {
    let runs: Vec<(String, String, String)> = (0..2)
        .map(|_| {
            let tmp = TempDir::new().unwrap();
            let dir = tmp.path();
            letter_model(dir);
            ok(dir, &["sample", "--model", "model.json", "--grid", "0:2:0.5", "--samples", "3", "--seed", "9", "--out", "s.csv"]);
            (read(dir, "demos.csv"), read(dir, "model.json"), read(dir, "s.csv"))
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn track_writes_a_report_and_summary() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    ok(dir, &["generate", "--kind", "minjerk", "--count", "5", "--samples", "81", "--noise", "1", "--seed", "4", "--out", "demos.csv"]);
    ok(dir, &["fit", "--demos", "demos.csv", "--components", "4", "--lengthscale", "0.8", "--out", "model.json"]);
    std::fs::write(
        dir.join("scenario.json"),
        r#"{
  "tracker": {"precision_scale": 1, "control_cost": 1e-6},
  "reference": {"model": "model.json", "grid": "0:5:0.0625",
                "via_points": [{"input": [5.0], "output": [0.8, 0.25], "noise": 1e-6}]},
  "goal": {"center": [0.8, 0.25], "radius": 0.02}
}"#,
    )
    .unwrap();
    ok(dir, &["track", "--scenario", "scenario.json", "--out", "track.csv", "--summary", "summary.json"]);
    let summary: serde_json::Value = serde_json::from_str(&read(dir, "summary.json")).unwrap();
    assert_eq!(summary["steps"], 81);
    assert_eq!(summary["diverged"], false);
    assert_eq!(summary["goal_reached"], true, "{summary}");
    let report = read(dir, "track.csv");
    assert!(report.starts_with("t,p0,p1,v0,v1,ref0,ref1,error,trace_q,gain_norm"));
    assert_eq!(report.lines().count(), 82);
}

#[test]
fn bench_emits_one_row_per_cell() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    std::fs::write(
        dir.join("bench.json"),
        r#"{"n_grid": [50, 100], "v_grid": [1, 3], "repetitions": 30, "warmup": 5, "max_batch": 4}"#,
    )
    .unwrap();
    ok(dir, &["bench", "--config", "bench.json", "--out", "bench.csv"]);
    let csv = read(dir, "bench.csv");
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("method,n,v"), "{header}");
    // MOGP ignores via-points, so it contributes one cell per N.
    assert_eq!(lines.count(), 2 * 2 + 2 + 2 * 2);
}
