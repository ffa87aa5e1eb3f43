use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn probevol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probevol")).args(args).output().expect("binary runs")
}

fn json_out(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulated_footprints_round_trip_through_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let fp = dir.path().join("footprints.csv");
    for (scenario, d, t) in [("s1", "300", "4"), ("s2", "40", "1")] {
        let sim = json_out(&probevol(&[
            "simulate", "--scenario", scenario, "--m", "8", "--trials", "50", "--seed", "31",
            "--emit-footprints", path_str(&fp),
        ]));
        let est = json_out(&probevol(&["estimate", "--footprints", path_str(&fp), "--d", d, "--t", t]));
        let internal = sim["trial0_m_hat"].as_f64().unwrap();
        assert_eq!(est["m_hat"].as_f64().unwrap().to_bits(), internal.to_bits());
        assert_eq!(est["warnings"], 0);
    }
}

#[test]
fn estimate_on_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let fp = dir.path().join("empty.csv");
    std::fs::write(&fp, "position_m,speed_mps\n").unwrap();
    let est = json_out(&probevol(&["estimate", "--footprints", path_str(&fp), "--d", "100", "--t", "1"]));
    assert_eq!(est["m_hat"].as_f64().unwrap(), 0.0);
    assert_eq!(est["warnings"], 0);
}

#[test]
fn estimate_reports_bad_rows_and_strict_mode_fails() {
    let dir = tempfile::tempdir().unwrap();
    let fp = dir.path().join("rows.csv");
    std::fs::write(&fp, "position_m,speed_mps\n10,20\nx,20\n30,20\n50,30\n").unwrap();
    let est = json_out(&probevol(&["estimate", "--footprints", path_str(&fp), "--d", "100", "--t", "1"]));
    assert_eq!(est["warnings"], 1);
    assert_eq!(est["issues"][0]["line"], 3);
    assert!((est["m_hat"].as_f64().unwrap() - 0.7).abs() < 1e-12);
    let strict = probevol(&["estimate", "--footprints", path_str(&fp), "--d", "100", "--t", "1", "--strict"]);
    assert_eq!(strict.status.code(), Some(4));
}

#[test]
fn precision_matches_published_variance() {
    let v = json_out(&probevol(&["precision", "--m", "1", "--d", "300", "--t", "4", "--dist", "park-i35"]));
    assert!((v["variance"].as_f64().unwrap() - 0.019).abs() <= 0.001);
    assert!((v["cv"].as_f64().unwrap() - 0.137).abs() <= 0.001);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let hist = dir.path().join(format!("hist-{tag}.csv"));
        let out = probevol(&["simulate", "--scenario", "s2", "--m", "4", "--trials", "3000", "--seed", "8",
            "--hist-out", path_str(&hist)]);
        assert!(out.status.success());
        (out.stdout, std::fs::read(&hist).unwrap())
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn pdf_curve_and_interval() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("pdf.csv");
    let v = json_out(&probevol(&[
        "pdf", "--m", "2", "--d", "300", "--t", "4", "--dist", "park-i35", "--level", "0.9", "--out", path_str(&csv),
    ]));
    assert!((v["mass"].as_f64().unwrap() - 1.0).abs() <= 1e-6);
    assert!((v["mean"].as_f64().unwrap() - 2.0).abs() <= 1e-3);
    let lo = v["interval"]["lower"].as_f64().unwrap();
    let hi = v["interval"]["upper"].as_f64().unwrap();
    assert!(lo < 2.0 && 2.0 < hi);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("m_hat,density"));
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len() as u64, v["points"].as_u64().unwrap());
    let mass: f64 = rows.iter().map(|r| r.1).sum::<f64>() * 1e-3;
    assert!((mass - 1.0).abs() < 1e-6);
}

#[test]
fn optimize_writes_curve() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curve.csv");
    let v = json_out(&probevol(&[
        "optimize", "--dmax", "150", "--t", "4", "--dist", "park-i35", "--objective", "cv", "--step", "1",
        "--curve-out", path_str(&csv),
    ]));
    assert!((v["best_d"].as_f64().unwrap() - 110.0).abs() <= 1.0);
    assert_eq!(v["objective_kind"], "cv");
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 151);
}

#[test]
fn calibrate_and_apply() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("pairs.csv");
    std::fs::write(&pairs, "m_hat,adt,weight\n1,60,4\n2,100,1\n").unwrap();
    let ols = json_out(&probevol(&["calibrate", "--pairs", path_str(&pairs), "--method", "ols"]));
    let wls = json_out(&probevol(&["calibrate", "--pairs", path_str(&pairs), "--method", "wls"]));
    assert!((ols["beta"].as_f64().unwrap() - 52.0).abs() < 1e-12);
    assert!((wls["beta"].as_f64().unwrap() - 55.0).abs() < 1e-12);

    let zeros = dir.path().join("zeros.csv");
    std::fs::write(&zeros, "m_hat,adt\n0,60\n0,100\n").unwrap();
    assert_eq!(probevol(&["calibrate", "--pairs", path_str(&zeros)]).status.code(), Some(5));

    let v = json_out(&probevol(&["apply", "--beta", "50", "--m-hat", "2"]));
    assert_eq!(v.as_f64().unwrap(), 100.0);
}

#[test]
fn experiment_report_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp.json");
    let summary = json_out(&probevol(&[
        "experiment", "--sites", "table2", "--trials", "5", "--seed", "3", "--out", path_str(&out),
    ]));
    let full: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(full["pairs_per_trial"], 561);
    assert_eq!(full["trials"].as_array().unwrap().len(), 5);
    assert_eq!(full["mean_ols_mape"], summary["mean_ols_mape"]);
}

#[test]
fn scenario_file_with_inline_distribution() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scenario.json");
    std::fs::write(
        &cfg,
        r#"{"d": 100, "t": 1, "dist": {"components": [{"mean": 20, "sd": 2, "weight": 1}], "lower": 0, "upper": 40}}"#,
    )
    .unwrap();
    let v = json_out(&probevol(&["simulate", "--scenario", path_str(&cfg), "--m", "3", "--trials", "2000", "--seed", "1"]));
    assert!((v["mean"].as_f64().unwrap() - 3.0).abs() < 0.05);
}

#[test]
fn failures_exit_with_json_errors() {
    let missing_seed = probevol(&["simulate", "--scenario", "s1", "--m", "1", "--trials", "10"]);
    assert_eq!(missing_seed.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&missing_seed.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "usage");

    let bad_preset = probevol(&["precision", "--m", "1", "--d", "300", "--t", "4", "--dist", "no-such-preset"]);
    assert_eq!(bad_preset.status.code(), Some(4));

    let bad_t = probevol(&["precision", "--m", "1", "--d", "300", "--t", "0", "--dist", "park-i35"]);
    assert_eq!(bad_t.status.code(), Some(3));
    let err: Value = serde_json::from_slice(&bad_t.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "invalid_parameter");

    let coarse = probevol(&["pdf", "--m", "1", "--d", "300", "--t", "4", "--dist", "park-i35", "--grid-step", "0.5"]);
    assert_eq!(coarse.status.code(), Some(3));

    assert!(probevol(&["--help"]).status.success());
    let version = probevol(&["--version"]);
    assert!(String::from_utf8_lossy(&version.stdout).contains(env!("CARGO_PKG_VERSION")));
}
