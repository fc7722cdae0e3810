//! End-to-end runs of the command-line binary: exit codes, written files
//! and byte-for-byte reproducibility.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lqg-turnpike"));
    cmd.env_remove("LQG_TURNPIKE_OUT");
    cmd
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).expect("file exists")).expect("valid JSON")
}

fn fix_a_json() -> Value {
    let o = bin().args(["example", "--example", "fix-a"]).output().unwrap();
    assert_eq!(code(&o), 0);
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&bin().arg("--help").output().unwrap()), 0);
    assert_eq!(code(&bin().args(["verify", "--help"]).output().unwrap()), 0);
    assert_eq!(code(&bin().arg("nonsense").output().unwrap()), 2);
    assert_eq!(code(&bin().args(["check"]).output().unwrap()), 2);
    assert_eq!(code(&bin().args(["check", "--example", "nope"]).output().unwrap()), 2);
    assert_eq!(code(&bin().args(["solve-finite", "--example", "fix-a", "--K", "4"]).output().unwrap()), 2);
}

#[test]
fn check_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("fix_a.json");
    fs::write(&spec_path, fix_a_json().to_string()).unwrap();
    let o = run(&["check", "--spec", spec_path.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&dir.path().join("assumptions.json"));
    assert!(report.to_string().contains("cost_and_noise_structure"));
}

#[test]
fn check_rejects_negative_own_weight() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = fix_a_json();
    spec["cost"]["Qblocks"][0][0][0] = serde_json::json!([[-0.5]]);
    let o = run(&["check", "--spec-json", &spec.to_string()], dir.path());
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&dir.path().join("assumptions.json"));
    assert!(report.to_string().contains("fail"));
    // Waiving the gate turns the failure into a pass.
    let o = run(&["check", "--spec-json", &spec.to_string(), "--waive-assumptions"], dir.path());
    assert_eq!(code(&o), 0);
}

#[test]
fn malformed_spec_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ \"N\": 2, ").unwrap();
    assert_eq!(code(&run(&["check", "--spec", bad.to_str().unwrap()], dir.path())), 2);
    let missing = dir.path().join("missing.json");
    assert_eq!(code(&run(&["check", "--spec", missing.to_str().unwrap()], dir.path())), 2);
}

#[test]
fn solve_finite_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve-finite", "--example", "fix-a", "--T", "10", "--K", "10000"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = read_json(&dir.path().join("finite.json"));
    let lambda_end = manifest["players"][0]["Lambda_T"][0][0].as_f64().unwrap();
    let lambda_0 = manifest["players"][0]["Lambda_0"][0][0].as_f64().unwrap();
    assert_eq!(lambda_end, 0.0);
    let r2 = 2f64.sqrt();
    let closed = r2 * (r2 * 10.0 + (1.0 / r2).atanh()).tanh() - 1.0;
    assert!((lambda_0 - closed).abs() < 1e-10);
    let csv = fs::read_to_string(dir.path().join("finite.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,Lambda_0_00,cov_0_00,mu_0_0,rho_0_0,kappa_0,Lambda_1_00,cov_1_00,mu_1_0,rho_1_0,kappa_1"
    );
    assert_eq!(lines.count(), 10_001);
    let last = csv.lines().last().unwrap();
    let fields: Vec<f64> = last.split(',').map(|f| f.parse().unwrap()).collect();
    assert!((fields[0] - 10.0).abs() < 1e-12);
    assert_eq!(fields[1], 0.0);
    assert_eq!(fields[5], 0.0);
}

#[test]
fn solve_ergodic_reports_value() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve-ergodic", "--example", "fix-a"], dir.path());
    assert_eq!(code(&o), 0);
    let erg = read_json(&dir.path().join("ergodic.json"));
    let c = erg["players"][0]["c"].as_f64().unwrap();
    assert!((c - (5.0 * 2f64.sqrt() - 4.0) / 8.0).abs() < 5e-7);
    assert!(erg["players"][0]["certificates"]["are_residual"].as_f64().unwrap() < 1e-10);
}

#[test]
fn consensus_32_players_within_budget() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let o = run(&["solve-finite", "--example", "consensus", "--N", "32", "--d", "1"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(start.elapsed().as_secs_f64() < 60.0);
}

#[test]
fn turnpike_outputs_and_reproducibility() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["turnpike", "--example", "fix-a", "--pathwise", "moments", "--horizons", "10,20,40"];
    assert_eq!(code(&run(&args, a.path())), 0);
    assert_eq!(code(&run(&args, b.path())), 0);
    for name in ["turnpike.json", "profiles.csv", "pathwise.csv", "plots.txt"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs between identical runs");
    }
    let report = read_json(&a.path().join("turnpike.json"));
    let gaps: Vec<f64> = report["value_series"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v["gap"][0].as_f64().unwrap())
        .collect();
    assert_eq!(gaps.len(), 3);
    for w in gaps.windows(2) {
        assert!((0.4..=0.6).contains(&(w[1] / w[0])), "{gaps:?}");
    }
    let header = fs::read_to_string(a.path().join("pathwise.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap(), "t,state,state_se,control,control_se");
    assert!(fs::read_to_string(a.path().join("plots.txt")).unwrap().contains("logscale"));
}

#[test]
fn uniform_scan_flag() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["turnpike", "--example", "consensus", "--pathwise", "none", "--uniform-scan", "--scan-ns", "2,4,8", "--horizons", "10"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&dir.path().join("turnpike.json"));
    assert_eq!(report["uniform_scan"]["entries"].as_array().unwrap().len(), 3);
    assert!(report["uniform_scan"]["spread"].is_object());
}

#[test]
fn simulation_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["simulate", "--example", "fix-a", "--T", "1", "--paths", "500", "--samples", "10", "--seed", "9"];
    assert_eq!(code(&run(&args, a.path())), 0);
    assert_eq!(code(&run(&args, b.path())), 0);
    for name in ["simulation.csv", "simulation.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
    }
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let env_out = dir.path().join("from_env");
    let o = bin()
        .args(["solve-ergodic", "--example", "fix-a"])
        .env("LQG_TURNPIKE_OUT", &env_out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(env_out.join("ergodic.json").exists());
    let flag_out = dir.path().join("from_flag");
    let o = bin()
        .args(["solve-ergodic", "--example", "fix-a", "--out"])
        .arg(&flag_out)
        .env("LQG_TURNPIKE_OUT", &env_out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(flag_out.join("ergodic.json").exists());
}

#[test]
fn verify_passes_and_negative_control_fails() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["verify", "--example", "fix-a", "--T", "2", "--paths", "4000", "--no-long-run"];
    let o = run(&base, dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let result = read_json(&dir.path().join("verify.json"));
    assert_eq!(result["result"]["passed"], Value::Bool(true));

    let mut shifted = base.to_vec();
    shifted.extend(["--shift-mu0", "0.5"]);
    let o = run(&shifted, dir.path());
    assert_eq!(code(&o), 1);
    let result = read_json(&dir.path().join("verify.json"));
    let checks = result["result"]["checks"].as_array().unwrap();
    let fp = checks.iter().find(|c| c["name"] == "fp_consistency").unwrap();
    assert_eq!(fp["status"], "fail");
}
