use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn infsig(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_infsig"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn minimal_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/minimal.toml")
}

#[test]
fn help_lists_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let out = infsig(dir.path(), &["--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["generate", "inject", "train", "influence", "signals", "evaluate", "sweep", "run"] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
    assert_eq!(code(&infsig(dir.path(), &["bogus"])), 1);
}

#[test]
fn stepwise_commands_chain_and_evaluate_refuses_foreign_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ok = |args: &[&str]| {
        let out = infsig(d, args);
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    ok(&["generate", "--n", "150", "--seed", "3", "--out", "g"]);
    ok(&["inject", "--train", "g/train.csv", "--validation", "g/validation.csv", "--type", "uniform_noise", "--epsilon", "0.2", "--seed", "3", "--out", "i"]);
    ok(&["train", "--train", "i/train.csv", "--epochs", "4", "--out", "t"]);
    ok(&["influence", "--trail", "t/trail.bin", "--train", "i/train.csv", "--validation", "g/validation.csv", "--out", "f"]);
    ok(&["signals", "--tensor", "f/tensor.bin", "--train", "i/train.csv", "--validation", "g/validation.csv", "--out", "s"]);
    ok(&["evaluate", "--rankings", "s/rankings.csv", "--errors", "i/errors.csv", "--out", "e"]);
    let results = fs::read_to_string(d.join("e/results.csv")).unwrap();
    assert!(results.starts_with("dataset,model,glitch_type,ratio,seed,signal,epoch_scope,f1,runtime_ms"));
    // cumulative plus four epochs, four signals
    assert_eq!(results.lines().count(), 1 + 4 * 5);

    // an error table describing a different contamination is refused
    ok(&["inject", "--train", "g/train.csv", "--type", "uniform_noise", "--epsilon", "0.2", "--seed", "4", "--out", "i2"]);
    let out = infsig(d, &["evaluate", "--rankings", "s/rankings.csv", "--errors", "i2/errors.csv", "--out", "e2"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("chain"));

    // so is a trail trained on another set
    let out = infsig(d, &["influence", "--trail", "t/trail.bin", "--train", "i2/train.csv", "--validation", "g/validation.csv", "--out", "f2"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn invalid_input_exits_one_and_runtime_failure_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&infsig(d, &["generate", "--n", "90", "--out", "g"])), 0);
    let out = infsig(d, &["inject", "--train", "g/train.csv", "--type", "uniform_noise", "--epsilon", "1.0", "--out", "i"]);
    assert_eq!(code(&out), 1);
    assert_eq!(code(&infsig(d, &["train", "--train", "missing.csv", "--out", "t"])), 2);

    let bad = d.join("bad.toml");
    let text = fs::read_to_string(minimal_config()).unwrap().replace("epsilon = 0.1", "epsilon = 1.0");
    fs::write(&bad, text).unwrap();
    let out = infsig(d, &["run", "--config", bad.to_str().unwrap(), "--out", "run"]);
    assert_eq!(code(&out), 1);
    let written = fs::read_dir(d.join("run")).map(|r| r.count()).unwrap_or(0);
    assert_eq!(written, 0);
}

#[test]
fn run_writes_six_stages_and_skips_them_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = minimal_config();
    let args = ["run", "--config", config.to_str().unwrap(), "--out", "run"];
    let first = infsig(d, &args);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let stdout = String::from_utf8_lossy(&first.stdout);
    assert_eq!(stdout.matches("Ran").count(), 6);
    let stage_dirs = fs::read_dir(d.join("run"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().is_dir())
        .count();
    assert_eq!(stage_dirs, 6);

    let second = infsig(d, &args);
    assert_eq!(code(&second), 0);
    assert_eq!(String::from_utf8_lossy(&second.stdout).matches("Skipped").count(), 6);

    // a different seed changes every key
    let third = infsig(d, &["run", "--config", config.to_str().unwrap(), "--out", "run", "--seed", "99"]);
    assert_eq!(code(&third), 0);
    assert_eq!(String::from_utf8_lossy(&third.stdout).matches("Ran").count(), 6);
}

#[test]
fn sweep_writes_rows_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = minimal_config();
    let out = Command::new(env!("CARGO_BIN_EXE_infsig"))
        .current_dir(d)
        .env("INFSIG_WORKERS", "2")
        .args(["sweep", "--config", config.to_str().unwrap(), "--out", "sw", "--ratios", "0.05,0.2", "--seeds", "0,1"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("sw/sweep.csv").exists());
    let plot = fs::read_to_string(d.join("sw/plot.csv")).unwrap();
    assert!(plot.lines().count() > 1);
}
