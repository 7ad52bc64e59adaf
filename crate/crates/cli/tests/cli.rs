//! End-to-end tests of the `tanml` binary: reproducibility of checkpoints
//! and CSVs, split-run resume equivalence, and the task-file eval path.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_tanml")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("TANML_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Small, fast config on top of the exp1 preset; `extra` lines override the
/// base (the config parser rejects duplicate keys).
fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("config.txt");
    let base = [
        "preset = exp1",
        "t_tr = 4",
        "t_v = 4",
        "shots = 8",
        "test_shots = 8",
        "x_std = 1",
        "noise_std = 1",
        "n_iter = 6",
        "mc_runs = 2",
        "seed = 11",
    ];
    let extra_keys: Vec<&str> = extra
        .lines()
        .filter_map(|l| l.split('=').next())
        .map(str::trim)
        .collect();
    let mut text = String::new();
    for line in base {
        let key = line.split('=').next().unwrap().trim();
        if !extra_keys.contains(&key) {
            text.push_str(line);
            text.push('\n');
        }
    }
    text.push_str(extra);
    std::fs::write(&path, text).unwrap();
    path
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("missing {}: {e}", path.display()))
}

#[test]
fn train_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "algorithms = tanml-cosine\n");
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        run_ok(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    assert_eq!(
        read(&out_a.join("tanml-cosine.ckpt")),
        read(&out_b.join("tanml-cosine.ckpt"))
    );
    assert_eq!(
        read(&out_a.join("tanml-cosine-trace.csv")),
        read(&out_b.join("tanml-cosine-trace.csv"))
    );
}

#[test]
fn zero_iteration_train_writes_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "algorithms = meta-sgd\n");
    let out = dir.path().join("out");
    run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--n-iter",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(out.join("meta-sgd.ckpt")).unwrap();
    assert!(text.contains("iteration = 0"));
    assert!(text.contains("opt_step_count = 0"));
    // Zero Adam moments at init.
    let m0 = text
        .lines()
        .find(|l| l.starts_with("opt_m_0 = "))
        .unwrap()
        .trim_start_matches("opt_m_0 = ");
    assert!(m0.split(' ').all(|w| w == "0000000000000000"));
}

#[test]
fn split_run_resume_equals_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "algorithms = tanml-gaussian\n");
    // Straight run: 6 iterations.
    let full = dir.path().join("full");
    run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        full.to_str().unwrap(),
    ]);
    // Split run: 4 then resume 2.
    let split = dir.path().join("split");
    run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--n-iter",
        "4",
        "--out",
        split.to_str().unwrap(),
    ]);
    let ckpt = split.join("tanml-gaussian.ckpt");
    run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--n-iter",
        "2",
        "--resume",
        ckpt.to_str().unwrap(),
        "--out",
        split.to_str().unwrap(),
    ]);
    assert_eq!(read(&full.join("tanml-gaussian.ckpt")), read(&ckpt));

    // Resuming for zero further iterations must reproduce the checkpoint.
    let before = read(&ckpt);
    run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--n-iter",
        "0",
        "--resume",
        ckpt.to_str().unwrap(),
        "--out",
        split.to_str().unwrap(),
    ]);
    assert_eq!(before, read(&ckpt));
}

#[test]
fn resume_rejects_mismatched_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "algorithms = maml\n");
    let out = dir.path().join("out");
    run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let other = tiny_config(&dir.path().join("."), "algorithms = maml\nmu = 0.2\n");
    let result = run(&[
        "train",
        "--config",
        other.to_str().unwrap(),
        "--resume",
        out.join("maml.ckpt").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!result.status.success());
    assert!(String::from_utf8_lossy(&result.stderr).contains("fingerprint"));
}

#[test]
fn eval_is_deterministic_and_matches_task_file_route() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "algorithms = tanml-cosine\n");
    let out = dir.path().join("out");
    run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let ckpt = out.join("tanml-cosine.ckpt");

    // In-process test tasks, twice: identical bytes.
    run_ok(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let first = read(&out.join("eval-tanml-cosine.csv"));
    run_ok(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(first, read(&out.join("eval-tanml-cosine.csv")));

    // Externally generated task file gives the identical result.
    run_ok(&[
        "gen-tasks",
        "--config",
        cfg.to_str().unwrap(),
        "--split",
        "test",
        "--out",
        out.to_str().unwrap(),
    ]);
    run_ok(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--tasks",
        out.join("tasks-test.jsonl").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(first, read(&out.join("eval-tanml-cosine.csv")));
}

#[test]
fn tanml_eval_on_its_training_tasks_is_finite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "algorithms = tanml-gaussian\n");
    let out = dir.path().join("out");
    run_ok(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    run_ok(&[
        "gen-tasks",
        "--config",
        cfg.to_str().unwrap(),
        "--split",
        "train",
        "--out",
        out.to_str().unwrap(),
    ]);
    let result = run_ok(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        out.join("tanml-gaussian.ckpt").to_str().unwrap(),
        "--tasks",
        out.join("tasks-train.jsonl").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&result.stdout);
    let nmse: f64 = stdout
        .split("nmse ")
        .nth(1)
        .and_then(|s| s.split(' ').next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(nmse.is_finite());
}

#[test]
fn compare_writes_results_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(
        dir.path(),
        "algorithms = maml,tanml-cosine,oracle\nnoise_std = 0\n",
    );
    let out = dir.path().join("out");
    let result = run_ok(&[
        "compare",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let table = String::from_utf8_lossy(&result.stdout);
    assert!(table.contains("maml"));
    assert!(table.contains("tanml-cosine"));
    let csv = String::from_utf8_lossy(&read(&out.join("results.csv"))).to_string();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "algorithm,experiment,t_tr,outlier_fraction,mc_runs,nmse_mean,nmse_stderr,n_iter,gradient_mode,seed"
    );
    assert_eq!(lines.count(), 3);
    // The noiseless oracle row scores exactly zero.
    let oracle_row = csv.lines().find(|l| l.starts_with("oracle,")).unwrap();
    assert_eq!(oracle_row.split(',').nth(5).unwrap(), "0");
}

#[test]
fn gradcheck_passes_and_reports() {
    let result = run_ok(&["gradcheck", "--input-dim", "2", "--t-tr", "2"]);
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("all"));
    assert!(!stdout.contains("FAIL"));
}

#[test]
fn bad_config_key_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.txt");
    std::fs::write(&path, "preset = exp1\nno_such_key = 1\n").unwrap();
    let result = run(&["train", "--config", path.to_str().unwrap()]);
    assert!(!result.status.success());
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("line 2"), "stderr: {stderr}");
    assert!(stderr.contains("no_such_key"));
}

#[test]
fn divergent_training_exits_nonzero_with_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(
        dir.path(),
        "algorithms = maml\noptimizer = gd\nmaml.lr_theta0 = 1e9\nn_iter = 50\n",
    );
    let out = dir.path().join("out");
    let result = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
    let trace = std::fs::read_to_string(out.join("maml-trace.csv")).unwrap();
    assert!(trace.lines().count() > 1, "partial trace should have rows");
    assert!(!out.join("maml.ckpt").exists());
}
