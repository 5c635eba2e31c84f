use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tbrfi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tbrfi")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn simulate_is_deterministic_and_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = tbrfi(&[
            "--preset",
            "paper_scenario_i",
            "--duration",
            "0.3",
            "--seed",
            "5",
            "--out",
            s(out),
            "simulate",
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["alice.tags", "bob.tags"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let m = json(&a.join("simulate.manifest.json"));
    // the configs differ only in the output directory
    assert_eq!(m["outputs"], json(&b.join("simulate.manifest.json"))["outputs"]);
    assert_eq!(m["seed"], 5);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);
    let saved = a.join(m["config_file"].as_str().unwrap());
    // the saved config replays the run
    let c = b.join("replay");
    let o = tbrfi(&["--config", s(&saved), "--out", s(&c), "simulate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read(a.join("alice.tags")).unwrap(),
        fs::read(c.join("alice.tags")).unwrap()
    );
}

#[test]
fn simulate_needs_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = tbrfi(&["--duration", "0.1", "--out", s(dir.path()), "simulate"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("seed"));
}

#[test]
fn config_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "schema_version = 1\nseed = 3\n\n[channel]\ndetector_jitter_sigma = -5.0\n",
    )
    .unwrap();
    let o = tbrfi(&["--config", s(&cfg), "--out", s(dir.path()), "simulate"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 5"), "{}", stderr(&o));
    let o = tbrfi(&["--preset", "nonexistent", "simulate"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn simulate_then_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let o = tbrfi(&[
        "--preset",
        "paper_scenario_i",
        "--duration",
        "3",
        "--out",
        out,
        "simulate",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = tbrfi(&["--preset", "paper_scenario_i", "--out", out, "analyze"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("series.csv"));
    assert_eq!(rows.len(), 3);
    for r in &rows {
        let qz: f64 = r[13].parse().unwrap();
        let c: f64 = r[10].parse().unwrap();
        assert!((qz - 0.042).abs() < 0.025, "{qz}");
        assert!((c - 0.885).abs() < 0.05, "{c}");
    }
    assert!(dir.path().join("series.columns.txt").exists());
    let report = json(&dir.path().join("key_report.json"));
    assert!(report["asymptotic_rate"].as_f64().unwrap() > 0.04);
    assert_eq!(report["readings"].as_array().unwrap().len(), 6);
    let m = json(&dir.path().join("analyze.manifest.json"));
    assert_eq!(m["inputs"].as_array().unwrap().len(), 2);

    // the estimate written by analyze feeds keyrate directly
    let o = tbrfi(&["keyrate", "--estimate", s(&dir.path().join("estimate.json"))]);
    assert!([0, 4].contains(&code(&o)), "{}", stderr(&o));
    assert!(stdout(&o).contains("largest penalty"));
}

#[test]
fn drift_ramp_shows_in_the_phase_column() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let o = tbrfi(&[
        "--preset",
        "paper_scenario_ii",
        "--duration",
        "8",
        "--out",
        out,
        "simulate",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = tbrfi(&["--preset", "paper_scenario_ii", "--out", out, "analyze"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let pts: Vec<(f64, f64)> = csv_rows(&dir.path().join("series.csv"))
        .iter()
        .map(|r| (r[0].parse::<f64>().unwrap() + 0.5, r[19].parse::<f64>().unwrap()))
        .collect();
    let n = pts.len() as f64;
    let (mt, mp) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let slope =
        pts.iter().map(|p| (p.0 - mt) * (p.1 - mp)).sum::<f64>() / pts.iter().map(|p| (p.0 - mt).powi(2)).sum::<f64>();
    assert!((slope - 0.1).abs() < 0.03, "slope {slope}");
}

#[test]
fn empty_run_gives_empty_series_and_no_key() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let o = tbrfi(&["--duration", "0", "--seed", "1", "--out", out, "simulate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = tbrfi(&["--out", out, "analyze"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(csv_rows(&dir.path().join("series.csv")).is_empty());
    let report = json(&dir.path().join("key_report.json"));
    assert_eq!(report["secret_bits"], 0);
    assert!(report["finite_key"].is_null());
}

#[test]
fn swapped_tag_files_are_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    assert_eq!(
        code(&tbrfi(&["--duration", "0.05", "--seed", "1", "--out", out, "simulate"])),
        0
    );
    let (a, b) = (dir.path().join("alice.tags"), dir.path().join("bob.tags"));
    let o = tbrfi(&["--out", out, "analyze", "--alice", s(&b), "--bob", s(&a)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    fs::write(&a, "not a tag file\n").unwrap();
    let o = tbrfi(&["--out", out, "analyze"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn keyrate_reports_and_signals_zero_key() {
    let o = tbrfi(&[
        "keyrate",
        "--n-total",
        "487936",
        "--qber",
        "0.042",
        "--c64",
        "0.8845",
        "--f",
        "1.0",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    for needle in [
        "asymptotic: 0.08029",
        "eve_information",
        "coherent_attack",
        "as-typeset/sacrifice",
    ] {
        assert!(text.contains(needle), "{needle} missing from\n{text}");
    }
    let o = tbrfi(&["keyrate", "--n-total", "2000", "--qber", "0.042", "--c64", "0.8845"]);
    assert_eq!(code(&o), 4);
    assert!(stdout(&o).contains("no positive secret key"));

    let o = tbrfi(&[
        "keyrate",
        "--json",
        "--n-total",
        "1000000000000000",
        "--qber",
        "0",
        "--c64",
        "1",
    ]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["finite_key"]["asymptotic_rate"].as_f64().unwrap() - 1.0 / 6.0).abs() < 1e-15);
    // the default reading sacrifices n_q of the key-map basis
    assert!((v["finite_key"]["rate"].as_f64().unwrap() - 0.9 / 6.0).abs() < 1e-4);
}

#[test]
fn keyrate_lists_missing_fields() {
    let o = tbrfi(&["keyrate", "--qber", "0.04"]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(
        err.contains("n_total") && err.contains("c64") && !err.contains("q_z"),
        "{err}"
    );
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.json");
    fs::write(&p, r#"{"q_z": 0.04, "n_total": 1000}"#).unwrap();
    let o = tbrfi(&["keyrate", "--estimate", s(&p)]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("c64"));
    // flags complete a partial file
    let o = tbrfi(&["keyrate", "--estimate", s(&p), "--c64", "0.9"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn sweep_writes_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.toml");
    fs::write(&cfg, "schema_version = 1\nseed = 4\n[sweep]\ntrials = 40\n").unwrap();
    let o = tbrfi(&[
        "--config",
        s(&cfg),
        "--out",
        s(dir.path()),
        "sweep",
        "--rate-grid",
        "0:1:0.5",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 3);
    let first: f64 = rows[0][2].parse().unwrap();
    let last: f64 = rows[2][2].parse().unwrap();
    assert!(last < first);
    assert!(stdout(&o).contains("C drop at 1 rad/s"));
    let summary = json(&dir.path().join("sweep_summary.json"));
    assert!(summary["threshold_analytic"].as_f64().unwrap() > 0.4);

    let o = tbrfi(&["--config", s(&cfg), "--out", s(dir.path()), "sweep", "--rate-grid", "0"]);
    assert_eq!(code(&o), 0);
    assert_eq!(csv_rows(&dir.path().join("sweep.csv")).len(), 1);
    let o = tbrfi(&["--config", s(&cfg), "sweep", "--rate-grid", "1:0:1"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn calibrate_finds_the_slots() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    let o = tbrfi(&[
        "--preset",
        "paper_scenario_i",
        "--duration",
        "2",
        "--out",
        out,
        "simulate",
    ]);
    assert_eq!(code(&o), 0);
    let o = tbrfi(&["--preset", "paper_scenario_i", "--out", out, "calibrate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let fit = json(&dir.path().join("calibration.json"));
    assert!((fit["spacing"].as_f64().unwrap() - 2200.0).abs() < 5.0);
    // two detectors of 100 ps jitter each
    let w = fit["peaks"][1]["width"].as_f64().unwrap();
    assert!((w - 100.0 * 2f64.sqrt()).abs() < 15.0, "{w}");
    assert!(!csv_rows(&dir.path().join("delay_histogram.csv")).is_empty());
}

#[test]
fn featureless_data_has_no_peaks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("dark.toml");
    // photons essentially never reach the detectors; only dark counts remain
    fs::write(
        &cfg,
        "schema_version = 1\nseed = 2\nduration = 2.0\n[channel]\nalice_total_efficiency = 0.0\n\
         bob_total_efficiency = 0.0\ndark_count_rate = 20000.0\n",
    )
    .unwrap();
    let out = s(dir.path());
    assert_eq!(code(&tbrfi(&["--config", s(&cfg), "--out", out, "simulate"])), 0);
    let o = tbrfi(&["--config", s(&cfg), "--out", out, "calibrate"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("calibration failed"));
}
