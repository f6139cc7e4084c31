//! Exit-code and surface checks for the `fednoise` binary.

use std::process::Command;

fn run(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fednoise"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn calibrate_prints_sigma_and_exits_zero() {
    let out = run(&[
        "calibrate",
        "--epsilon",
        "10",
        "--delta",
        "1e-4",
        "--sensitivity",
        "3",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("sigma=1.30308"), "stdout: {text}");
}

#[test]
fn invalid_parameter_exits_one() {
    let out = run(&[
        "calibrate",
        "--epsilon=-1",
        "--delta",
        "1e-4",
        "--sensitivity",
        "3",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn malformed_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.conf");
    std::fs::write(&path, "k = not_a_number\n").unwrap();
    let out = run(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 1"), "stderr: {err}");
}

#[test]
fn missing_config_file_exits_two() {
    let out = run(&["train", "--config", "/nonexistent/path.conf"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn collusion_defaults_to_threshold_distortion() {
    let out = run(&["collusion", "--rho", "0.75", "--trials", "2000"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("tau_sq=0.5"), "stdout: {text}");
    assert!(text.contains("attacker_variance_analytic=1"), "stdout: {text}");
}
