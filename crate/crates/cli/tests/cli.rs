use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qmirror(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmirror"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn experiments() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../experiments")
}

fn small_config(dir: &Path, horizon: usize) -> PathBuf {
    let text = std::fs::read_to_string(experiments().join("estimation_tau5.toml"))
        .unwrap()
        .replace("horizon = 5000", &format!("horizon = {horizon}"));
    let path = dir.join("small.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_writes_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), 300);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let o = qmirror(&[
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv_a = std::fs::read(out_a.join("estimation_tau5.csv")).unwrap();
    let csv_b = std::fs::read(out_b.join("estimation_tau5.csv")).unwrap();
    assert_eq!(csv_a, csv_b);
    let text = String::from_utf8(csv_a).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,agent,rel_err,rel_err_avg,consensus,quant_err_max,E_t,proj_err_max,bregman_err_max,bits_cum,slack_min"
    );
    assert_eq!(lines.count(), 300 * 30);
    assert!(out_a.join("estimation_tau5.svg").exists());
    assert!(out_a.join("estimation_tau5.summary.toml").exists());

    let rates = qmirror(&[
        "rates",
        "--record",
        out_a.join("estimation_tau5.csv").to_str().unwrap(),
    ]);
    assert!(rates.status.success());
    assert!(String::from_utf8_lossy(&rates.stdout).starts_with("rho = "));
}

#[test]
fn perfect_channel_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), 50);
    let o = qmirror(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--no-quantize",
        "--tau",
        "0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("estimation_tau5.csv")).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[5], "0");
    assert_eq!(row[6], "0");
}

#[test]
fn sweep_emits_nine_records_and_a_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let grid = std::fs::read_to_string(experiments().join("rate_table.toml"))
        .unwrap()
        .replace("horizon = 5000", "horizon = 200");
    let path = dir.path().join("grid.toml");
    std::fs::write(&path, grid).unwrap();
    let out = dir.path().join("out");
    let o = qmirror(&[
        "sweep",
        "--grid",
        path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csvs = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            let name = e.as_ref().unwrap().file_name();
            let name = name.to_string_lossy();
            name.starts_with("rate_") && name.ends_with(".csv")
        })
        .count();
    assert_eq!(csvs, 9);
    let comparison = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert_eq!(comparison.lines().count(), 10);
}

#[test]
fn validate_exit_codes() {
    assert!(qmirror(&["validate"]).status.success());
    assert_eq!(qmirror(&["validate", "--drop-beta"]).status.code(), Some(1));
    assert_eq!(
        qmirror(&["validate", "--single-level"]).status.code(),
        Some(1)
    );
}

#[test]
fn tripped_monitor_fails_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), 20);
    let o = qmirror(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--fault",
        "drop-beta",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("mid_value_update at t = 0"), "{stderr}");
    let summary = std::fs::read_to_string(dir.path().join("estimation_tau5.summary.toml")).unwrap();
    assert!(summary.contains("[first_violation]"));
}

#[test]
fn bad_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), 10);
    let harmonic = std::fs::read_to_string(&config).unwrap().replace(
        "alpha = { a0 = 1.0, rho = 0.5 }",
        "alpha = { a0 = 1.0, rho = 1.0 }",
    );
    std::fs::write(&config, harmonic).unwrap();
    let o = qmirror(&["run", "--config", config.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("exponent"));

    let missing = qmirror(&[
        "rates",
        "--record",
        dir.path().join("nope.csv").to_str().unwrap(),
    ]);
    assert_eq!(missing.status.code(), Some(2));
}
