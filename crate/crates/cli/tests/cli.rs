//! Drives the `sacx` binary through train, eval, plot, preset and experiment.

use std::path::Path;
use std::process::Command;

use sacx_cli::ExperimentSpec;
use sacx_runtime::RunConfig;

fn sacx(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_sacx")).args(args).output().unwrap();
    assert!(out.status.success(), "sacx {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_eval_plot() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = RunConfig::chain_fixture();
    config.runtime.episodes_per_actor = 30;
    config.runtime.single_process = false;
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, config.to_toml_string().unwrap()).unwrap();
    let run = dir.path().join("run");
    let stdout = sacx(&["train", "--config", path(&cfg), "--seed", "3", "--single-process", "--out", path(&run)]);
    assert!(stdout.contains("30 episodes"), "{stdout}");
    let written = RunConfig::load(&run.join("config.toml")).unwrap();
    assert_eq!(written.runtime.seed, 3);
    assert!(written.runtime.single_process);

    let ck = run.join("checkpoint_final.bin");
    let summary: serde_json::Value =
        serde_json::from_str(&sacx(&["eval", "--checkpoint", path(&ck), "--task", "CHAIN_AT(4)", "--episodes", "3"]))
            .unwrap();
    assert_eq!(summary["returns"].as_array().unwrap().len(), 3);
    assert_eq!(summary["task"], "CHAIN_AT(4)");

    let csv = dir.path().join("curves.csv");
    sacx(&["plot", "--metrics", path(&run.join("metrics.jsonl")), "--out", path(&csv), "--window", "5"]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("series,episode,value,moving_average\n"));
    // 30 training rows plus evaluations at episodes 25 for the main task.
    assert_eq!(text.lines().filter(|l| l.starts_with("train/main,")).count(), 30);
    assert_eq!(text.lines().filter(|l| l.starts_with("eval/CHAIN_AT(4),")).count(), 1);

    let json = dir.path().join("curves.json");
    sacx(&["plot", "--metrics", path(&run.join("metrics.jsonl")), "--out", path(&json)]);
    let series: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(series[0]["name"], "train/main");
}

#[test]
fn unknown_task_fails() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = RunConfig::chain_fixture();
    config.runtime.episodes_per_actor = 2;
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, config.to_toml_string().unwrap()).unwrap();
    let run = dir.path().join("run");
    sacx(&["train", "--config", path(&cfg), "--out", path(&run)]);
    let out = Command::new(env!("CARGO_BIN_EXE_sacx"))
        .args(["eval", "--checkpoint", path(&run.join("checkpoint_final.bin")), "--task", "STACK(1)"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn preset_then_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("chain.toml");
    sacx(&["preset", "chain", "--out", path(&spec_path)]);
    let mut spec = ExperimentSpec::load(&spec_path).unwrap();
    spec.episodes = 50;
    std::fs::write(&spec_path, spec.to_toml_string().unwrap()).unwrap();
    let out = dir.path().join("exp");
    let report: serde_json::Value =
        serde_json::from_str(&sacx(&["experiment", "--spec", path(&spec_path), "--out", path(&out)])).unwrap();
    assert!(report["modes"]["learned"].is_object());
    assert!(out.join("modes_report.json").is_file());

    for name in ["stack", "distractors"] {
        let p = dir.path().join(format!("{name}.toml"));
        sacx(&["preset", name, "--out", path(&p)]);
        assert!(ExperimentSpec::load(&p).is_ok());
    }
}
