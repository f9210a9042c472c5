use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diging-pep"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json_stdout(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "bad JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn data_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(String::from)
        .collect()
}

#[test]
fn pep_solve_reports_finite_certified_value() {
    let out = run(&[
        "pep", "solve", "--topology", "all_to_all", "--n", "4", "--tau", "2", "--rounds", "5", "--alpha", "0.2", "--mu",
        "0.1", "--l", "1",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json_stdout(&out);
    let value = v["record"]["value"].as_f64().unwrap();
    assert!(value.is_finite() && value > 0.0 && value < 1.0);
    assert_eq!(v["certification"]["passed"], true);
    assert_eq!(v["meta"]["config"]["tau"], 2);
    assert_eq!(v["meta"]["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn zero_rounds_gives_initial_radius_squared() {
    let out = run(&["pep", "solve", "--tau", "2", "--rounds", "0", "--alpha", "0.2"]);
    assert_eq!(out.status.code(), Some(0));
    let value = json_stdout(&out)["record"]["value"].as_f64().unwrap();
    assert!((value - 1.0).abs() < 1e-6, "{value}");
}

#[test]
fn usage_errors_exit_2() {
    let out = run(&["pep", "solve", "--rounds", "1", "--alpha", "0.2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("tau"));

    let out = run(&["pep", "solve", "--tau", "1", "--rounds", "1", "--alpha", "0.2", "--topology", "star"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["pep", "solve", "--tau", "1", "--rounds", "1", "--alpha", "0.2", "--mu", "2", "--l", "1"]);
    assert_eq!(out.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"tau": "two"}"#).unwrap();
    let out = run(&["pep", "solve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid type"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"topology": "ring", "n": 3, "tau": 1, "rounds": 1, "alpha": 0.9}"#).unwrap();
    let from_file = run(&["--no-timing", "pep", "solve", "--config", cfg.to_str().unwrap(), "--alpha", "0.3"]);
    assert_eq!(from_file.status.code(), Some(0));
    let from_flags = run(&[
        "--no-timing", "pep", "solve", "--topology", "ring", "--n", "3", "--tau", "1", "--rounds", "1", "--alpha", "0.3",
    ]);
    let (a, b) = (json_stdout(&from_file), json_stdout(&from_flags));
    assert_eq!(a["meta"]["config"]["alpha"], 0.3);
    assert_eq!(a["meta"]["config_hash"], b["meta"]["config_hash"]);
    assert_eq!(a, b);
}

#[test]
fn pep_sweep_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let files = |tag: &str| {
        let csv = dir.path().join(format!("{tag}.csv"));
        let sum = dir.path().join(format!("{tag}.json"));
        let out = run(&[
            "--no-timing", "pep", "sweep", "--n", "2", "--rounds", "2", "--taus", "1,2", "--alpha-lo", "0.1",
            "--alpha-hi", "0.5", "--resolution", "0.1", "--csv", csv.to_str().unwrap(), "--summary",
            sum.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        (fs::read(&csv).unwrap(), fs::read(&sum).unwrap())
    };
    let first = files("a");
    assert_eq!(first, files("b"));
    let rows = data_rows(&dir.path().join("a.csv"));
    assert_eq!(rows.len(), 10);
    let summary: Value = serde_json::from_slice(&first.1).unwrap();
    let a1 = summary["summary"]["1"]["alpha_star"].as_f64().unwrap();
    assert!((0.1..=0.5).contains(&a1));
    assert_eq!(summary["mode"], "certified");
}

#[test]
fn pep_sweep_default_grid_has_80_points_per_tau() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("s.csv");
    let out = run(&["pep", "sweep", "--n", "2", "--rounds", "1", "--csv", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 4 * 80);
    assert!(rows[0].starts_with("1,1,0.01,"));
    assert!(rows[319].starts_with("4,1,0.8,"));
    // summary goes to stderr when no path is given
    let summary: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(summary["summary"]["4"]["value_star"].is_number());
}

#[test]
fn pep_export_round_trips() {
    let out = run(&["pep", "export", "--tau", "2", "--rounds", "1", "--alpha", "0.2", "--full"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# "));
    let prog = diging_pep::sdp::GramProgram::parse_text(&text).unwrap();
    assert_eq!(prog.dim, 4 * (2 + 4));
}

#[test]
fn verify_trivial_and_violated() {
    let out = run(&["verify", "--tau", "1", "--rounds", "2", "--alpha", "0.3", "--trials", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_stdout(&out);
    assert_eq!(v["report"]["max_ratio"], 0.0);
    assert_eq!(v["passed"], true);

    let out = run(&["verify", "--tau", "1", "--rounds", "2", "--alpha", "0.3", "--trials", "4", "--certificate", "1e-4"]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(json_stdout(&out)["passed"], false);
}

#[test]
fn verify_passes_against_certificate() {
    let out = run(&["verify", "--n", "2", "--tau", "2", "--rounds", "2", "--alpha", "0.3", "--trials", "30"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json_stdout(&out);
    assert!(v["report"]["max_ratio"].as_f64().unwrap() <= 1.0 + 1e-6);
    assert!(v["gap"].as_f64().unwrap() >= -1e-8);
}

#[test]
fn sim_run_zero_rounds_has_initial_error_only() {
    let out = run(&["sim", "run", "--preset", "motivating", "--tau", "2", "--rounds", "0", "--alpha", "0.5"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows, vec!["round,agent_avg_sq_error", "0,0.44444444444444453"]);
}

#[test]
fn sim_random_presets_require_seed() {
    let out = run(&["sim", "run", "--preset", "quadratic", "--tau", "1", "--rounds", "1", "--alpha", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn sim_sweep_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "--no-timing", "sim", "sweep", "--preset", "regression", "--seed", "3", "--m", "10", "--d", "5", "--topology",
        "ring", "--rounds", "5", "--taus", "1,2", "--out-dir", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(data_rows(&dir.path().join("sweep.csv")).len(), 160);
    for tau in [1, 2] {
        let curve = data_rows(&dir.path().join(format!("curve_tau{tau}.csv")));
        assert_eq!(curve.len(), 6);
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["mode"], "empirical");
}

#[test]
fn sim_bundle_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let inst = diging_pep::generator::motivating_example();
    diging_pep::generator::write_bundle(&inst, dir.path()).unwrap();
    let a = run(&["sim", "run", "--preset", "motivating", "--tau", "2", "--rounds", "3", "--alpha", "0.5"]);
    let b = run(&[
        "sim", "run", "--preset", "bundle", "--bundle", dir.path().to_str().unwrap(), "--tau", "2", "--rounds", "3",
        "--alpha", "0.5",
    ]);
    assert_eq!(b.status.code(), Some(0), "{}", String::from_utf8_lossy(&b.stderr));
    let rows = |o: &Output| {
        String::from_utf8_lossy(&o.stdout)
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(String::from)
            .collect::<Vec<_>>()
    };
    assert_eq!(rows(&a), rows(&b));
}

#[test]
fn graph_prints_mixing_matrix() {
    let out = run(&["graph", "--topology", "ring", "--n", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json_stdout(&out);
    assert_eq!(v["edges"].as_array().unwrap().len(), 5);
    let rows = v["weights"].as_array().unwrap();
    for r in rows {
        let s: f64 = r.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn jobs_flag_is_accepted() {
    let out = run(&["--jobs", "1", "pep", "solve", "--tau", "1", "--rounds", "1", "--alpha", "0.2"]);
    assert_eq!(out.status.code(), Some(0));
    let out = run(&["--jobs", "0", "graph"]);
    assert_eq!(out.status.code(), Some(2));
}
