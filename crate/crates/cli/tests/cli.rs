use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kglattice(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kglattice"))
        .args(args)
        .env("KGLAT_OUT", out)
        .output()
        .expect("binary runs")
}

#[test]
fn passing_run_exits_zero_and_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = kglattice(&["run", "ccr", "--seed", "3"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let res = dir.path().join("ccr");
    let summary = fs::read_to_string(res.join("summary.txt")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("PASS KG4")), "{summary}");
    assert!(summary.trim_end().ends_with("ALL PASS"));
    let manifest = fs::read_to_string(res.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 3"));
    assert!(manifest.contains("kglattice-cli = "));
    let csv = fs::read(res.join("ccr.csv")).unwrap();
    assert!(!csv.contains(&b'\r'));
    assert!(csv.ends_with(b"\n"));
}

#[test]
fn out_flag_overrides_environment() {
    let env_dir = tempfile::tempdir().unwrap();
    let flag_dir = tempfile::tempdir().unwrap();
    let out = kglattice(&["run", "green", "--refine", "2", "--out", flag_dir.path().to_str().unwrap()], env_dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(flag_dir.path().join("green/convergence.csv").exists());
    assert!(!env_dir.path().join("green").exists());
}

#[test]
fn failed_assertion_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = kglattice(&["run", "conserve", "--refine", "1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let summary = fs::read_to_string(dir.path().join("conserve/summary.txt")).unwrap();
    assert!(summary.contains("FAIL conservation"), "{summary}");
}

#[test]
fn usage_and_config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(kglattice(&["run", "nonsense"], dir.path()).status.code(), Some(1));
    assert_eq!(kglattice(&["run"], dir.path()).status.code(), Some(1));
    assert_eq!(kglattice(&["run", "ccr", "--seed", "x"], dir.path()).status.code(), Some(1));
    assert_eq!(kglattice(&["run", "ccr", "--tol-scale", "0"], dir.path()).status.code(), Some(1));

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[grid]\nn_t = 64\n\n[field]\nmass = 2.0\n").unwrap();
    let out = kglattice(&["run", "ccr", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 5"));

    let missing = kglattice(&["run", "ccr", "--config", "/nonexistent/cfg.toml"], dir.path());
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn help_and_listing_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(kglattice(&["--help"], dir.path()).status.code(), Some(0));
    let list = kglattice(&["list"], dir.path());
    assert_eq!(list.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&list.stdout).lines().count(), 12);
    let cfg = kglattice(&["config"], dir.path());
    let text = String::from_utf8(cfg.stdout).unwrap();
    assert!(kglattice_cli::config::ExperimentConfig::parse(&text).is_ok());
}
