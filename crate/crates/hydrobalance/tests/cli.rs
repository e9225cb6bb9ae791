//! End-to-end checks of the command-line surface, including the
//! reproduce-from-manifest contract: re-running any subcommand from the
//! manifest it wrote must reproduce every data file byte for byte.

use std::fs;
use std::path::Path;
use std::process::Command;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hydrobalance"))
}

fn small_config() -> &'static str {
    r#"
[model]
n = 50
lambda = 1.0
lambda_hat = 0.0
b = 0.2
mu = 1.0
mu_hat = 0.21
ell = 4
replacement = "without"
seed = 99

[model.service]
kind = "exponential"

[init]
kind = "uniform"
lo = 0.0
hi = 4.0

[sim]
snapshots = [0.5, 1.0]
replications = 2
record_ranks = true
tracked = [0, 3]

[pde]
dx = 0.02
x_max = 30.0
times = [0.5, 1.0]

[mv]
particles = 2000
dt = 0.01
mode = "self"
snapshots = [0.5]
"#
}

fn run_ok(args: &[&str]) {
    let output = binary().args(args).output().expect("spawn binary");
    assert!(
        output.status.success(),
        "hydrobalance {args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn assert_dirs_byte_identical(a: &Path, b: &Path) {
    let mut names: Vec<String> = fs::read_dir(a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(!names.is_empty());
    for name in names {
        let left = fs::read(a.join(&name)).unwrap();
        let right = fs::read(b.join(&name)).unwrap_or_else(|_| panic!("{name} missing in rerun"));
        assert_eq!(left, right, "{name} differs between run and manifest rerun");
    }
}

fn rerun_from_manifest(subcommand: &str, extra: &[&str]) {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.toml");
    fs::write(&config_path, small_config()).unwrap();
    let out1 = dir.path().join("run1");
    let out2 = dir.path().join("run2");

    let mut args1: Vec<&str> = vec![subcommand, "--config", config_path.to_str().unwrap()];
    args1.extend_from_slice(extra);
    args1.extend_from_slice(&["--out", out1.to_str().unwrap()]);
    run_ok(&args1);

    let manifest = out1.join("manifest.toml");
    assert!(manifest.exists(), "{subcommand} wrote no manifest");
    let args2: Vec<&str> = vec![
        subcommand,
        "--config",
        manifest.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ];
    run_ok(&args2);

    assert_dirs_byte_identical(&out1, &out2);
}

#[test]
fn sim_rerun_from_manifest_is_byte_identical() {
    rerun_from_manifest("sim", &[]);
}

#[test]
fn pde_rerun_from_manifest_is_byte_identical() {
    rerun_from_manifest("pde", &[]);
}

#[test]
fn mv_rerun_from_manifest_is_byte_identical() {
    rerun_from_manifest("mv", &[]);
}

#[test]
fn stationary_rerun_from_manifest_is_byte_identical() {
    rerun_from_manifest("stationary", &[]);
}

#[test]
fn experiment_rerun_from_manifest_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.toml");
    let mut config = String::from(small_config()).replace("mu_hat = 0.21", "mu_hat = 0.1");
    config.push_str("\n[experiment]\nname = \"stationary_limits\"\nb_sweep = [0.001, 100.0]\n");
    fs::write(&config_path, &config).unwrap();
    let out1 = dir.path().join("run1");
    let out2 = dir.path().join("run2");
    run_ok(&[
        "experiment",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        out1.to_str().unwrap(),
    ]);
    run_ok(&[
        "experiment",
        "--config",
        out1.join("manifest.toml").to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert_dirs_byte_identical(&out1, &out2);
}

#[test]
fn sim_writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.toml");
    fs::write(&config_path, small_config()).unwrap();
    let out = dir.path().join("out");
    run_ok(&[
        "sim",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    for name in [
        "snapshot_0.5.csv",
        "snapshot_1.csv",
        "stats.csv",
        "ranks.csv",
        "tracked.csv",
        "manifest.toml",
    ] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    let tracked = fs::read_to_string(out.join("tracked.csv")).unwrap();
    assert!(tracked.starts_with("replication,queue,t,x_hat,l_hat"));
    // 2 replications x 2 tracked queues x 2 snapshot times + header.
    assert_eq!(tracked.lines().count(), 9);
    let stats = fs::read_to_string(out.join("stats.csv")).unwrap();
    assert!(stats.starts_with("t,mean,m2,var,stderr"));
    // 2 replications x 50 queues pooled per snapshot.
    let snap = fs::read_to_string(out.join("snapshot_1.csv")).unwrap();
    assert_eq!(snap.lines().count(), 101);
}

#[test]
fn cli_overrides_update_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.toml");
    fs::write(&config_path, small_config()).unwrap();
    let out = dir.path().join("out");
    run_ok(&[
        "sim",
        "--config",
        config_path.to_str().unwrap(),
        "--seed",
        "123",
        "--snapshots",
        "0.25",
        "--out",
        out.to_str().unwrap(),
    ]);
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 123"));
    assert!(manifest.contains("snapshots = [0.25]"));
    assert!(out.join("snapshot_0.25.csv").exists());
}

#[test]
fn pde_emits_profile_and_macro_files() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.toml");
    fs::write(&config_path, small_config()).unwrap();
    let out = dir.path().join("out");
    run_ok(&[
        "pde",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    for name in ["v_0.5.csv", "v_1.csv", "macro.csv", "stationary.csv"] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    let v = fs::read_to_string(out.join("v_1.csv")).unwrap();
    let mut lines = v.lines();
    assert_eq!(lines.next().unwrap(), "x,v,u");
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "0");
    assert_eq!(first[1], "1");
}

#[test]
fn routing_check_prints_exact_table() {
    let output = binary()
        .args(["routing-check", "--n", "4", "--ell", "2"])
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "r,p_paper,p_oracle,abs_err");
    let row1: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row1[0], "1");
    assert_eq!(row1[1], "0.5");
    assert_eq!(row1[3], "0");
}

#[test]
fn experiment_exit_status_tracks_tolerances() {
    // stationary_limits runs in well under a second and exercises the
    // pass/fail exit contract.
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.toml");
    let mut config = String::from(small_config());
    config.push_str(
        r#"
[experiment]
name = "stationary_limits"
b_sweep = [0.001, 100.0]
"#,
    );
    // The sweep fixes rho from the perturbations alone; make it -0.1.
    let config = config.replace("mu_hat = 0.21", "mu_hat = 0.1");
    fs::write(&config_path, &config).unwrap();
    let out = dir.path().join("out");
    run_ok(&[
        "experiment",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(report.contains("small_b_sup_err"));
    assert!(report.contains("large_b_m_mac"));
    assert!(out.join("stationary_sweep.csv").exists());

    // An impossible tolerance flips the exit status.
    let failing = config.replace(
        "[experiment]",
        "[experiment]\ntolerances = { small_b_sup = 1e-12 }",
    );
    fs::write(&config_path, &failing).unwrap();
    let status = binary()
        .args([
            "experiment",
            "--config",
            config_path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!status.status.success());
}

#[test]
fn rejects_unknown_config_fields() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.toml");
    let broken = String::from(small_config()).replace("lambda_hat", "lambda_typo");
    fs::write(&config_path, broken).unwrap();
    let output = binary()
        .args(["sim", "--config", config_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!output.status.success());
    let err = String::from_utf8_lossy(&output.stderr);
    assert!(
        err.contains("lambda_typo") || err.contains("unknown field"),
        "stderr: {err}"
    );
}
