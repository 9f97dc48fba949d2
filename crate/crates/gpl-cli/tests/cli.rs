//! Drives the `gpl` binary end to end over a generated task directory.

use std::fs;
use std::path::Path;
use std::process::Command;

fn gpl() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gpl"))
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let config = dir.join("pipeline.toml");
    fs::write(
        &config,
        "manifest = \"task/manifest.toml\"\noutput_dir = \"out\"\n\n[walk]\nwalks_per_node = 5\n",
    )
    .unwrap();
    config
}

#[test]
fn synth_then_all_then_project() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(
        &spec,
        "task_name = \"cli-task\"\nk_true = 3\nvideos = 3\nclips_per_step = [2, 4]\ndim = 16\nseed = 11\n",
    )
    .unwrap();

    let out = gpl()
        .args(["synth", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(dir.path().join("task"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("task/manifest.toml").exists());

    let config = write_config(dir.path());
    let out = gpl().args(["all", "--config"]).arg(&config).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("eval: done"), "{stdout}");
    assert!(dir.path().join("out/eval/report.csv").exists());

    // second run skips everything
    let out = gpl().args(["all", "--config"]).arg(&config).output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("skipped"), "{stdout}");

    let out = gpl().args(["project", "--config"]).arg(&config).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/project/projection.csv").exists());
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "manifest = \"missing.toml\"\noutput_dir = \"out\"\n[walk]\np = -1.0\n")
        .unwrap();
    let out = gpl().args(["graph", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_artifacts_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    fs::write(&spec, "task_name = \"t\"\nk_true = 2\nvideos = 2\nclips_per_step = [2, 2]\n")
        .unwrap();
    gpl()
        .args(["synth", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(dir.path().join("task"))
        .status()
        .unwrap();
    let config = write_config(dir.path());
    // cluster without upstream stages
    let out = gpl().args(["cluster", "--config"]).arg(&config).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
