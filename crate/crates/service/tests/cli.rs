use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tsms_core::optimizer::GaConfig;
use tsms_core::scenarios::congested_day;

fn tsms(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsms")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Congested day with a small search budget.
fn small_scenario(dir: &Path) -> PathBuf {
    let mut s = congested_day();
    s.name = "small".into();
    s.ga = GaConfig {
        population: 16,
        generations: 8,
        ..GaConfig::default()
    };
    let path = dir.join("small.json");
    std::fs::write(&path, s.to_json()).unwrap();
    path
}

fn run_day(scenario: &Path, seed: u64, out: &Path) -> Output {
    tsms(&[
        "run-day",
        "--scenario",
        scenario.to_str().unwrap(),
        "--seed",
        &seed.to_string(),
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&tsms(&["--help"])), 0);
    assert_eq!(code(&tsms(&["--version"])), 0);
    assert_eq!(code(&tsms(&["run-day", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&tsms(&[])), 1);
    assert_eq!(code(&tsms(&["frobnicate"])), 1);
    assert_eq!(code(&tsms(&["run-day", "--seed", "x", "--scenario", "congested", "--out", "o"])), 1);
}

#[test]
fn missing_scenario_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere/scenario.json");
    let o = run_day(&missing, 1, &dir.path().join("out"));
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains(missing.to_str().unwrap()), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn invalid_scenario_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = congested_day();
    s.s_max = 0;
    let path = dir.path().join("bad.json");
    std::fs::write(&path, s.to_json()).unwrap();
    let o = run_day(&path, 1, &dir.path().join("out"));
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("s_max"), "{}", stderr(&o));

    std::fs::write(&path, "{ not json").unwrap();
    assert_eq!(code(&run_day(&path, 1, &dir.path().join("out"))), 1);
}

#[test]
fn bad_policy_and_alpha_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let o = tsms(&["run-day", "--scenario", "congested", "--policy", "cheapest", "--out", out]);
    assert_eq!(code(&o), 1);
    let o = tsms(&["run-day", "--scenario", "congested", "--alpha=-1", "--out", out]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("alpha"));
}

#[test]
fn run_day_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&run_day(&scenario, 7, &a)), 0);
    assert_eq!(code(&run_day(&scenario, 7, &b)), 0);
    let manifest = std::fs::read_to_string(a.join("manifest.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    let files = parsed["files"].as_array().unwrap();
    assert!(files.len() >= 10);
    for f in files {
        let name = f["name"].as_str().unwrap();
        let bytes = std::fs::read(a.join(name)).unwrap();
        assert_eq!(bytes, std::fs::read(b.join(name)).unwrap(), "{name} differs");
        assert_eq!(f["sha256"].as_str().unwrap(), tsms_service::artifacts::sha256_hex(&bytes));
    }
    assert_eq!(manifest, std::fs::read_to_string(b.join("manifest.json")).unwrap());
    assert_eq!(parsed["seed"], 7);
}

#[test]
fn report_compare_reproduces_the_run_report() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path());
    let run = dir.path().join("run");
    assert_eq!(code(&run_day(&scenario, 3, &run)), 0);
    let base = run.join("base.json");
    let opt = run.join("optimized.json");
    let out = dir.path().join("report.json");
    let o = tsms(&[
        "report",
        "--compare",
        base.to_str().unwrap(),
        opt.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(run.join("report.json")).unwrap());

    // comparing a run with itself yields no gain
    let o = tsms(&["report", "--compare", opt.to_str().unwrap(), opt.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let same: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(same["total_gain_eur"], 0.0);
    assert_eq!(same["rescheduled"], 0);
}

#[test]
fn report_of_different_seeds_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&run_day(&scenario, 1, &a)), 0);
    assert_eq!(code(&run_day(&scenario, 2, &b)), 0);
    let o = tsms(&[
        "report",
        "--compare",
        a.join("base.json").to_str().unwrap(),
        b.join("optimized.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));

    let o = tsms(&["report", "--compare", "/nonexistent/base.json", a.join("base.json").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn data_pipeline_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let d = data.to_str().unwrap();
    let o = tsms(&["datagen", "--out", d, "--days", "90", "--choices", "3000", "--seed", "5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["containers.csv", "demand.csv", "choices.csv", "gate_arrivals.csv", "gate_departures.csv", "traffic.csv"] {
        assert!(data.join(f).is_file(), "{f} missing");
    }

    let cal = dir.path().join("cal");
    let o = tsms(&[
        "calibrate",
        "--arrivals",
        &format!("{d}/gate_arrivals.csv"),
        "--departures",
        &format!("{d}/gate_departures.csv"),
        "--replications",
        "3",
        "--out",
        cal.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(cal.join("calibration.json")).unwrap()).unwrap();
    assert!(report["service_rate"].as_f64().unwrap() > 0.0);

    let ch = dir.path().join("choice");
    let o = tsms(&["estimate-choice", "--observations", &format!("{d}/choices.csv"), "--out", ch.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(ch.join("choice_model.json").is_file());

    let fc = dir.path().join("forecast");
    let o = tsms(&[
        "train-forecast",
        "--containers",
        &format!("{d}/containers.csv"),
        "--steps",
        "40",
        "--hidden",
        "4",
        "--out",
        fc.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fc.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["seq2seq"]["mae"].as_f64().unwrap().is_finite());

    let o = tsms(&["calibrate", "--arrivals", &format!("{d}/gate_arrivals.csv"), "--departures", &format!("{d}/demand.csv"), "--out", cal.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "mismatched inputs: {}", stderr(&o));
}

#[test]
fn fit_traffic_reports_held_out_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traffic");
    let o = tsms(&["fit-traffic", "--scenario", "congested", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("traffic_fit.json")).unwrap()).unwrap();
    let m = v["holdout_speed_mape_pct"].as_f64().unwrap();
    assert!(m.is_finite() && m >= 0.0);
    assert_eq!(v["mean_day_loss_eur"].as_array().unwrap().len(), congested_day().network.graph.corridors.len());
}

/// Equal structure, equal strings and integers, floats within 1e-9 relative.
fn assert_close(path: &str, got: &serde_json::Value, want: &serde_json::Value) {
    use serde_json::Value;
    match (got, want) {
        (Value::Object(g), Value::Object(w)) => {
            let (gk, wk): (Vec<_>, Vec<_>) = (g.keys().collect(), w.keys().collect());
            assert_eq!(gk, wk, "keys differ at {path}");
            for (k, v) in w {
                assert_close(&format!("{path}.{k}"), &g[k], v);
            }
        }
        (Value::Array(g), Value::Array(w)) => {
            assert_eq!(g.len(), w.len(), "length differs at {path}");
            for (i, (a, b)) in g.iter().zip(w).enumerate() {
                assert_close(&format!("{path}[{i}]"), a, b);
            }
        }
        (Value::Number(g), Value::Number(w)) if g.is_f64() || w.is_f64() => {
            let (a, b) = (g.as_f64().unwrap(), w.as_f64().unwrap());
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{path}: {a} vs {b}");
        }
        _ => assert_eq!(got, want, "at {path}"),
    }
}

#[test]
fn report_compare_matches_the_golden_file() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/report_small_seed3.json");
    let dir = tempfile::tempdir().unwrap();
    let scenario = small_scenario(dir.path());
    let run = dir.path().join("run");
    assert_eq!(code(&run_day(&scenario, 3, &run)), 0);
    let o = tsms(&[
        "report",
        "--compare",
        run.join("base.json").to_str().unwrap(),
        run.join("optimized.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    if std::env::var_os("TSMS_UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden.parent().unwrap()).unwrap();
        std::fs::write(&golden, &o.stdout).unwrap();
    }
    let got: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let want: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&golden).unwrap()).unwrap();
    // the version field moves with releases
    let strip = |mut v: serde_json::Value| {
        v.as_object_mut().unwrap().remove("version");
        v
    };
    assert_close("report", &strip(got), &strip(want));
}
