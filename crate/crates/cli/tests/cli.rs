use std::fs;
use std::process::{Command, Output};

use tempfile::TempDir;

const C: f64 = 4.0 / 7.0;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ringflow")).args(args).output().expect("binary runs")
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> String {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn summary_value(text: &str, key: &str) -> String {
    text.split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing from {text}"))
        .to_owned()
}

#[test]
fn empty_ring_reports_zero_flow() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "empty.toml", "density = 0\ncycle = 60\n");
    let out = run(&["simulate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(summary_value(&stderr, "gbar"), "0");
    assert_eq!(summary_value(&stderr, "converged"), "true");
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("t,G,g,lambda,gamma,beta\n"));
}

#[test]
fn critical_density_runs_at_effective_capacity() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "crit.toml", "density_ratio = 1\ncycle = 60\n");
    let csv = dir.path().join("series.csv");
    let out = run(&["simulate", "--config", &cfg, "--out", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let gbar: f64 = summary_value(&stdout, "gbar").parse().unwrap();
    assert!((gbar - 0.45 * C).abs() < 1e-8, "{gbar}");
    assert!(fs::read_to_string(&csv).unwrap().lines().count() > 1);
}

#[test]
fn bad_configs_exit_with_config_code() {
    let dir = TempDir::new().unwrap();
    let cases = [
        ("unknown.toml", "speed = 3\n"),
        ("negative.toml", "wave_speed = -5\n"),
        ("overfull.toml", "density = 0.2\n"),
        ("grid.toml", "cycle = \"60:30:5\"\n"),
    ];
    for (name, text) in cases {
        let cfg = write_config(&dir, name, text);
        let out = run(&["mfd-sweep", "--config", &cfg]);
        assert_eq!(out.status.code(), Some(4), "{name}");
    }
    assert_eq!(run(&["simulate", "--config", "/no/such/file.toml"]).status.code(), Some(4));
    let grid = write_config(&dir, "two.toml", "density_ratio = [0.5, 1]\n");
    assert_eq!(run(&["simulate", "--config", &grid]).status.code(), Some(4));
}

#[test]
fn sweeps_are_deterministic_across_job_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "sweep.toml", "density_ratio = \"0:2:0.5\"\ncycle = [40, 90, 150]\n");
    let render = |jobs: &str| {
        let path = dir.path().join(format!("mfd-{jobs}.csv"));
        let out = run(&["mfd-sweep", "--with-sim", "--jobs", jobs, "--config", &cfg, "--out", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0));
        fs::read(&path).unwrap()
    };
    assert_eq!(render("1"), render("2"));
}

#[test]
fn optimize_flags_the_critical_density() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "opt.toml", "density_ratio = [0.6666666666666666, 1, 2]\n");
    let out = run(&["optimize", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[1].contains(",sparse,86,"));
    assert!(rows[2].contains(",critical,unbounded (cap 600),"));
    assert!(rows[3].contains(",dense,366,"));
    let table = String::from_utf8(out.stderr).unwrap();
    assert!(table.contains("T* (s)"));
}

#[test]
fn validate_default_cell_passes() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("validate.csv");
    let out = run(&["validate", "--out", csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.lines().nth(1).unwrap().ends_with(",pass"));
}

#[test]
fn cycle_sweep_objective_matches_known_points() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "cyc.toml", "density_ratio = 0.6666666666666666\ncycle = [60, 120]\n");
    let out = run(&["cycle-sweep", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let csv = String::from_utf8(out.stdout).unwrap();
    let objective: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(5).unwrap().parse().unwrap())
        .collect();
    assert!((objective[0] - 0.9 * 0.5 * C).abs() < 1e-8);
    assert!((objective[1] - 2.0 / 3.0 * 0.5 * C).abs() < 1e-8);
}

#[test]
fn truncated_run_exits_as_not_converged() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "short.toml", "density_ratio = 2\ncycle = 60\nmax_cycles = 2\n");
    let out = run(&["simulate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(summary_value(&stderr, "converged"), "false");
}

#[test]
fn validation_failure_exits_with_two() {
    let dir = TempDir::new().unwrap();
    // forward branch binds with green longer than the lag remainder
    let cfg = write_config(&dir, "uneven.toml", "density_ratio = 0.23809523809523808\ncycle = 140\n");
    let out = run(&["validate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let report = String::from_utf8(out.stderr).unwrap();
    assert!(report.contains("0 of 1 cells pass"));
}
