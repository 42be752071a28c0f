use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bandit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bandit"))
        .args(args)
        .env_remove("BANDIT_SHUTTLE_PATH")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn line_count(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn run_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = bandit(&[
        "run", "--env", "artificial", "--policy", "rs,oracle", "--steps", "300", "--runs", "2", "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(line_count(&out_dir.join("rs.csv")), 301);
    assert_eq!(line_count(&out_dir.join("oracle.csv")), 301);
    assert_eq!(line_count(&out_dir.join("results_long.csv")), 1 + 2 * 4 * 300);
    assert!(out_dir.join("metadata.json").exists());
    assert!(fs::read_to_string(out_dir.join("regret.svg")).unwrap().starts_with("<svg"));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("oracle"));
}

#[test]
fn neuralrs_label_includes_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let out = bandit(&[
        "run", "--env", "artificial", "--policy", "neuralrs", "--reliability", "trial", "--steps", "60", "--runs",
        "1", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("neuralrs-trial.csv").exists());
}

#[test]
fn bad_arguments_are_config_errors() {
    assert_eq!(code(&bandit(&["run", "--env", "artificial", "--policy", "nope"])), 1);
    assert_eq!(code(&bandit(&["run", "--env", "moon", "--policy", "rs"])), 1);
    assert_eq!(code(&bandit(&["run", "--env", "artificial", "--policy", "rs", "--steps", "0"])), 1);
    assert_eq!(code(&bandit(&["frobnicate"])), 1);
    assert_eq!(code(&bandit(&["--help"])), 0);
}

#[test]
fn missing_shuttle_file_is_an_ingestion_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.trn");
    let out = bandit(&[
        "run", "--env", "shuttle", "--policy", "rs", "--shuttle-path", missing.to_str().unwrap(), "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.trn"));
}

#[test]
fn shuttle_file_is_loaded() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("mini.trn");
    fs::write(&data, "50 21 77 0 28 0 27 48 22 2\n37 0 76 0 28 18 40 48 8 1\n46 0 83 0 46 0 37 36 0 4\n").unwrap();
    let out = bandit(&[
        "run", "--env", "shuttle", "--policy", "lingreedy", "--steps", "100", "--runs", "2", "--shuttle-path",
        data.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn compare_runs_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("suite.conf");
    fs::write(
        &config,
        "env = artificial\nsteps = 200\nruns = 2\nout = res\n\n[policy.greedy]\nkind = lingreedy\n\n[policy.rs]\naleph = 0.6\n",
    )
    .unwrap();
    let out = bandit(&["compare", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(line_count(&dir.path().join("res/greedy.csv")), 201);
    assert!(dir.path().join("res/rs.csv").exists());
}

#[test]
fn bad_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.conf");
    fs::write(&config, "policies = rs\nmystery = 3\n").unwrap();
    let out = bandit(&["compare", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn all_runs_failing_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("diverge.conf");
    fs::write(
        &config,
        format!(
            "env = artificial\nsteps = 80\nruns = 2\nout = {}\n\n[policy.unstable]\nkind = neuralrs\nwidth = 4\nlearning_rate = 1e300\n",
            dir.path().join("o").display()
        ),
    )
    .unwrap();
    let out = bandit(&["compare", "--config", config.to_str().unwrap()]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}
