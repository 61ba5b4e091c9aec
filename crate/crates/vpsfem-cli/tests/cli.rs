//! End-to-end tests of the command-line surface: exit codes, file outputs,
//! and byte-level determinism.

use std::fs;
use std::path::PathBuf;

use vpsfem_cli::run_cli;

struct TempDir(PathBuf);

impl TempDir {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!(
            "vpsfem_cli_{tag}_{}",
            std::process::id()
        ));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        TempDir(dir)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.0);
    }
}

fn cli(args: &[&str]) -> i32 {
    run_cli(std::iter::once("vpsfem").chain(args.iter().copied()))
}

/// Constant steady state through the custom preset: zero perturbation around
/// the odd root of f', so nothing moves.
const STEADY_CONFIG: &str = r#"{
    "preset": {"custom": {
        "gamma": 1e-3, "epsilon": 1e-3, "d0": 1.0,
        "c_scale": 1.2649110640673518,
        "f_scale": 16.0, "f_root_low": 0.05, "f_root_high": 0.95,
        "kappa_scale": 1e-2, "a_scale": 5e-3, "a_slope": 5.0,
        "phi_star": 0.5, "perturbation": 0.0
    }},
    "n": 4, "final_time": 0.5, "steps": 5, "seed": 1
}"#;

#[test]
fn validate_experiment1_passes() {
    let dir = TempDir::new("validate");
    let cfg = dir.path("config.json");
    fs::write(
        &cfg,
        r#"{"preset": "experiment1", "n": 8, "final_time": 1.0, "steps": 16}"#,
    )
    .unwrap();
    assert_eq!(cli(&["validate", "--config", cfg.to_str().unwrap()]), 0);
}

#[test]
fn malformed_config_names_key_and_exits_1() {
    let dir = TempDir::new("badcfg");
    let cfg = dir.path("config.json");
    fs::write(
        &cfg,
        r#"{"preset": "experiment1", "n": 8, "final_time": 1.0, "steps": 16, "stride": 2}"#,
    )
    .unwrap();
    assert_eq!(cli(&["simulate", "--config", cfg.to_str().unwrap()]), 1);
}

#[test]
fn check_steady_state_passes() {
    let dir = TempDir::new("check");
    let cfg = dir.path("config.json");
    fs::write(&cfg, STEADY_CONFIG).unwrap();
    assert_eq!(cli(&["check", "--config", cfg.to_str().unwrap()]), 0);
}

#[test]
fn simulate_writes_deterministic_outputs() {
    let dir = TempDir::new("simulate");
    let cfg = dir.path("config.json");
    // Two quick steps of a mild custom problem with snapshots at every step.
    let config = r#"{
        "preset": {"custom": {
            "gamma": 1e-3, "epsilon": 1e-3, "d0": 1.0,
            "c_scale": 1.2649110640673518,
            "f_scale": 16.0, "f_root_low": 0.05, "f_root_high": 0.95,
            "kappa_scale": 1e-2, "a_scale": 5e-3, "a_slope": 5.0,
            "phi_star": 0.5, "perturbation": 0.002
        }},
        "n": 4, "final_time": 0.01, "steps": 2, "seed": 7,
        "snapshot_stride": 1
    }"#;
    fs::write(&cfg, config).unwrap();

    let out1 = dir.path("run1");
    let out2 = dir.path("run2");
    assert_eq!(
        cli(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out1.to_str().unwrap()
        ]),
        0
    );
    assert_eq!(
        cli(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out2.to_str().unwrap()
        ]),
        0
    );

    let csv1 = fs::read(out1.join("diagnostics.csv")).unwrap();
    let csv2 = fs::read(out2.join("diagnostics.csv")).unwrap();
    assert_eq!(csv1, csv2, "CSV must be byte-identical across reruns");

    let text = String::from_utf8(csv1).unwrap();
    assert_eq!(text.lines().count(), 4, "header plus 3 node rows");
    assert!(text.starts_with(
        "step,t,mass,energy,dissipation,identity_residual,newton_iters\n"
    ));
    // Mass column is constant across rows (to solver tolerance; the scheme
    // conserves the integral up to the Newton residual).
    let masses: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert!(
        masses.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12),
        "{masses:?}"
    );

    for k in 0..=2 {
        let name = format!("snapshot_{k:06}.vtk");
        let a = fs::read(out1.join(&name)).unwrap();
        let b = fs::read(out2.join(&name)).unwrap();
        assert_eq!(a, b, "{name} must be byte-identical");
        assert!(a.starts_with(b"# vtk DataFile Version 3.0\n"));
    }
}

#[test]
fn converge_row_counts_match_levels() {
    let dir = TempDir::new("converge");
    let cfg = dir.path("config.json");
    // Weak-potential dynamics (experiment-2 strength) so every slab on the
    // ladder is a plain Newton solve and the test stays fast.
    let config = r#"{
        "preset": {"custom": {
            "gamma": 1e-3, "epsilon": 1e-3, "d0": 1.0,
            "c_scale": 0.31622776601683794,
            "f_scale": 1.0, "f_root_low": 0.05, "f_root_high": 0.95,
            "kappa_scale": 1e-3, "a_scale": 0.5, "a_slope": 10.0,
            "phi_star": 0.4, "perturbation": 0.001
        }},
        "n": 4, "final_time": 0.5, "seed": 3, "steps": 1
    }"#;
    fs::write(&cfg, config).unwrap();
    let out = dir.path("study");
    assert_eq!(
        cli(&[
            "converge",
            "--config",
            cfg.to_str().unwrap(),
            "--levels",
            "2",
            "--out",
            out.to_str().unwrap()
        ]),
        0
    );
    let csv = fs::read_to_string(out.join("convergence.csv")).unwrap();
    // Header plus one row per reported level (2 levels -> 2 rows), and the
    // eoc cell of the first row is empty.
    assert_eq!(csv.lines().count(), 3);
    let first = csv.lines().nth(1).unwrap();
    let cells: Vec<&str> = first.split(',').collect();
    assert_eq!(cells[4], "", "first eoc cell must be empty");
    assert!(out.join("convergence.txt").exists());
}
