//! End-to-end checks of the command-line binary: exit codes, output files,
//! overrides, determinism, and the shipped example configurations.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_colloidsim"))
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .ancestors()
        .nth(2)
        .unwrap()
        .to_path_buf()
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("colloidsim-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn write_config(tag: &str, body: &str) -> PathBuf {
    let path = std::env::temp_dir().join(format!("colloidsim-cli-{tag}-{}.cfg", std::process::id()));
    std::fs::write(&path, body).unwrap();
    path
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("process terminated by signal")
}

const QUICK_COLUMN: &str = "[scenario]\nkind = column_single\n\
[column]\nlength = 0.101\ndarcy_velocity = 1.02e-4\nporosity = 0.392\n\
collector_radius = 1.6e-4\nparticle_radius = 1.5e-7\ndispersivity = 6.92e-4\n\
kinetic_rate = 5e-7\ninlet_conc = 5.58e14\npulse_duration = 5445\n\
[blocking]\nkind = langmuir\n[numerics]\nnodes = 41\ndt = 100\nt_end = 2000\n";

#[test]
fn column_run_succeeds_and_writes_outputs() {
    let cfg = write_config("ok", QUICK_COLUMN);
    let out_dir = temp_dir("ok");
    let out = bin()
        .args(["column", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("breakthrough.csv").is_file());
    assert!(out_dir.join("report.txt").is_file());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mass_balance"), "stdout: {stdout}");
    let _ = std::fs::remove_dir_all(&out_dir);
    let _ = std::fs::remove_file(&cfg);
}

#[test]
fn unknown_key_exits_with_config_code() {
    let cfg = write_config("badkey", &format!("{QUICK_COLUMN}typo_key = 1\n"));
    let out = bin().args(["column", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("typo_key"));
    let _ = std::fs::remove_file(&cfg);
}

#[test]
fn missing_config_file_exits_with_config_code() {
    let out = bin()
        .args(["column", "--config", "/nonexistent/path.cfg"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 2);
}

#[test]
fn subcommand_mismatch_exits_with_config_code() {
    let cfg = write_config("mismatch", QUICK_COLUMN);
    let out = bin().args(["cell", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not belong"));
    let _ = std::fs::remove_file(&cfg);
}

#[test]
fn solver_failure_exits_with_solver_code() {
    let cfg = write_config(
        "nosolve",
        &format!("{QUICK_COLUMN}max_newton = 0\nnewton_tol = 1e-14\n"),
    );
    let out_dir = temp_dir("nosolve");
    let out = bin()
        .args(["column", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert_eq!(code(&out), 3, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    // failed runs must not leave partial outputs behind
    assert!(!out_dir.join("breakthrough.csv").exists());
    let _ = std::fs::remove_dir_all(&out_dir);
    let _ = std::fs::remove_file(&cfg);
}

#[test]
fn resolution_override_changes_node_count() {
    let cfg = write_config("res", QUICK_COLUMN);
    let out_dir = temp_dir("res");
    let out = bin()
        .args(["column", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .args(["--resolution", "21"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let report = std::fs::read_to_string(out_dir.join("report.txt")).unwrap();
    assert!(report.contains("nodes = 21"), "report: {report}");
    let _ = std::fs::remove_dir_all(&out_dir);
    let _ = std::fs::remove_file(&cfg);
}

#[test]
fn repeated_cli_runs_are_byte_identical() {
    let cfg = write_config("det", QUICK_COLUMN);
    let out_dir = temp_dir("det");
    let run = || {
        let out = bin()
            .args(["column", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir)
            .output()
            .unwrap();
        assert_eq!(code(&out), 0);
        std::fs::read(out_dir.join("breakthrough.csv")).unwrap()
    };
    let first = run();
    let second = run();
    assert_eq!(first, second);
    let _ = std::fs::remove_dir_all(&out_dir);
    let _ = std::fs::remove_file(&cfg);
}

/// Every configuration shipped in configs/ must load and run cleanly under
/// its documented subcommand (resolution reduced to keep this test fast).
#[test]
fn shipped_configs_run_cleanly() {
    let root = workspace_root();
    let cases = [
        ("cell", "cell_disc.cfg", Some(64)),
        ("batch", "batch_brownian.cfg", None),
        ("column", "johnson1996.cfg", Some(51)),
        ("column", "column_aggregating.cfg", Some(51)),
        ("compare", "blocking_compare.cfg", Some(51)),
        ("sweep", "rate_sweep.cfg", Some(51)),
    ];
    for (sub, file, res) in cases {
        let cfg = root.join("configs").join(file);
        assert!(cfg.is_file(), "missing shipped config {}", cfg.display());
        let out_dir = temp_dir(&format!("ship-{file}"));
        let mut cmd = bin();
        cmd.arg(sub)
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(&out_dir);
        if let Some(r) = res {
            cmd.args(["--resolution", &r.to_string()]);
        }
        let out = cmd.output().unwrap();
        assert_eq!(
            code(&out),
            0,
            "{sub} {file}: stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        assert!(out_dir.join("report.txt").is_file(), "{file} wrote no report");
        let _ = std::fs::remove_dir_all(&out_dir);
    }
}
