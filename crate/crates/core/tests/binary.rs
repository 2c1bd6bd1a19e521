use std::path::Path;
use std::process::Command;

fn cmat() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cmat"))
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
        .display()
        .to_string()
}

#[test]
fn reflection_ab_run_prints_outcomes_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmat()
        .args(["run", "--config", &fixture("reflection_ab/config.json"), "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("Completed\t2 turn(s)\t1 reflection(s)"), "{stdout}");

    let out = cmat()
        .args([
            "run",
            "--config",
            &fixture("reflection_ab/config.json"),
            "--reflection",
            "off",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("TLE\t5 turn(s)\t0 reflection(s)"));
}

#[test]
fn missing_config_exits_nonzero_with_path() {
    let out = cmat()
        .args(["run", "--config", "/nonexistent/config.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/config.json"));
}

#[test]
fn check_gradients_passes() {
    let out = cmat().args(["check-gradients", "--instances", "20"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_arguments_exit_with_usage_error() {
    let out = cmat().args(["run", "--jobs", "many"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
