use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn rhno(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rhno"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

/// The bundled 6 s config shortened to `duration` seconds, written into `dir`.
fn short_config(dir: &Path, duration: f64) -> PathBuf {
    let text = std::fs::read_to_string(bundled("paper_s5_6s.cfg")).unwrap();
    let text = text.replacen("duration = 6.0", &format!("duration = {duration}"), 1);
    let path = dir.join("short.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn validate_config_prints_derived_values() {
    let path = bundled("paper_s5_6s.cfg");
    let out = rhno(&["validate-config", path.to_str().unwrap()]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("h = 300, h_c = 20"), "{stdout}");
    assert!(stdout.contains("3000"), "{stdout}");
}

#[test]
fn run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 0.1);
    let out_dir = dir.path().join("out");
    let out = rhno(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--allocator",
        "mbno",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("timeseries.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
    assert!(out_dir.join("metrics.json").exists());
}

#[test]
fn seed_override_changes_the_recorded_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 0.05);
    let out_dir = dir.path().join("out");
    let out = rhno(&[
        "--seed",
        "42",
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--allocator",
        "pseudoinverse_only",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let metrics = std::fs::read_to_string(out_dir.join("metrics.json")).unwrap();
    assert!(metrics.contains("\"seed\": 42"), "{metrics}");
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.cfg");
    std::fs::write(&path, "allocator = \"mbno\"\n").unwrap();
    let out = rhno(&["validate-config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn missing_config_is_not_a_config_error() {
    let out = rhno(&["validate-config", "/nonexistent/rhno.cfg"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn fallback_budget_exit_code() {
    // Motor limits far below hover make every receding cycle fall back to MBNO.
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(bundled("paper_s5_6s.cfg"))
        .unwrap()
        .replacen("duration = 6.0", "duration = 0.1", 1)
        .replace("u_max = 6.0", "u_max = 0.3");
    let path = dir.path().join("weak.cfg");
    std::fs::write(&path, text).unwrap();
    let out = rhno(&["run", "--config", path.to_str().unwrap(), "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
