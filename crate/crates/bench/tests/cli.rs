use std::path::Path;
use std::process::{Command, Output};

fn bench(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bench"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env_remove("ODEGRAD_SEED")
        .env_remove("ODEGRAD_JOBS")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.cfg");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn success_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tolerances = 1e-4\ngrid_sizes = 8\n");
    let out = bench(&["tol_grid_sweep"], &cfg, &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("o/tol_grid_sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "experiment,seed,system,repeat,method,tol,n,reference_tol,z0_jitter,l1_error,l2_error,forward_nfe,backward_nfe,status,wall_ms"
    );
    let row = lines.next().unwrap();
    assert!(row.starts_with("tol_grid_sweep,0,cubic,0,irdm:8:bli,1.0000000000000000e-4,8,"), "{row}");
    assert!(lines.next().is_none());
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");
    let bad_key = write_config(dir.path(), "colour = blue\n");
    assert_eq!(bench(&["tol_grid_sweep"], &bad_key, &out_dir).status.code(), Some(2));

    let ok = write_config(dir.path(), "");
    assert_eq!(bench(&["no_such_experiment"], &ok, &out_dir).status.code(), Some(2));
    assert_eq!(bench(&["tol_grid_sweep", "--repeat", "0"], &ok, &out_dir).status.code(), Some(2));
    assert_eq!(bench(&["tol_grid_sweep", "--seed", "x"], &ok, &out_dir).status.code(), Some(2));
    let missing = dir.path().join("missing.cfg");
    assert_eq!(bench(&["tol_grid_sweep"], &missing, &out_dir).status.code(), Some(2));
    assert!(!out_dir.exists());
}

#[test]
fn failed_cells_exit_three_after_writing() {
    let dir = tempfile::tempdir().unwrap();
    // No step size meets this tolerance, so every reference fails.
    let cfg = write_config(dir.path(), "tolerances = 1e-4\ngrid_sizes = 4, 8\nreference_tol = 1e-300\n");
    let out = bench(&["tol_grid_sweep"], &cfg, &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("o/tol_grid_sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().skip(1).all(|l| l.contains("failed: reference")), "{text}");
}

#[test]
fn seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tolerances = 1e-4\ngrid_sizes = 4\nz0_jitter = 0.1\n");
    let run = |env: Option<&str>, flag: Option<&str>, sub: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_bench"));
        cmd.arg("tol_grid_sweep").arg("--config").arg(&cfg).arg("--out").arg(dir.path().join(sub));
        cmd.env_remove("ODEGRAD_SEED").env("ODEGRAD_JOBS", "2");
        if let Some(s) = env {
            cmd.env("ODEGRAD_SEED", s);
        }
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        assert!(cmd.status().unwrap().success());
        let text = std::fs::read_to_string(dir.path().join(sub).join("tol_grid_sweep.csv")).unwrap();
        text.lines().nth(1).unwrap().split(',').nth(1).unwrap().to_string()
    };
    assert_eq!(run(Some("42"), None, "a"), "42");
    assert_eq!(run(Some("42"), Some("7"), "b"), "7");
    assert_eq!(run(None, None, "c"), "0");
}
