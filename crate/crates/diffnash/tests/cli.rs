//! Smoke tests for the binary: subcommand wiring and exit codes.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_diffnash"))
}

fn repo_file(rel: &str) -> String {
    format!("{}/../../{rel}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn tabular_solve_rps_converges_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let gaps = dir.path().join("gaps.csv");
    let out = bin()
        .args(["tabular-solve", "--game", &repo_file("games/rps.txt"), "--out"])
        .arg(&gaps)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    // Uniform equilibrium on RPS.
    assert_eq!(stdout.matches("0.333333").count(), 3, "{stdout}");
    assert!(gaps.exists());

    let svg = dir.path().join("gaps.svg");
    let out = bin()
        .args(["plot", "--input"])
        .arg(&gaps)
        .args(["--kind", "gap", "--out"])
        .arg(&svg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
}

#[test]
fn tabular_solve_nonconvergence_exits_2() {
    let out = bin()
        .args([
            "tabular-solve",
            "--game",
            &repo_file("games/n2_biased.txt"),
            "--tau",
            "0.01",
            "--eta",
            "10",
            "--max-iters",
            "1",
            "--tol",
            "1e-12",
        ])
        .args(["--out"])
        .arg(tempfile::tempdir().unwrap().path().join("g.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_rejects_bad_config_with_field_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\n").unwrap();
    let out = bin().args(["train", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mixture"));
}

#[test]
fn plot_unknown_kind_exits_1_listing_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("x.csv");
    std::fs::write(&input, "1,2\n").unwrap();
    let out = bin()
        .args(["plot", "--input"])
        .arg(&input)
        .args(["--kind", "scatter", "--out"])
        .arg(dir.path().join("x.svg"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("gap") && err.contains("ablation"), "{err}");
}

#[test]
fn train_echoes_resolved_config_and_honors_out_root() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["train", "--config", &repo_file("configs/default.toml")])
        .args([
            "--set",
            "out_dir=run_a",
            "--set",
            "schedule.t_max=20",
            "--set",
            "train.steps=1",
            "--set",
            "train.prompts_per_step=2",
            "--set",
            "train.candidates=2",
            "--set",
            "train.inference_steps=4",
            "--set",
            "train.pretrain_epochs=1",
            "--set",
            "train.pretrain_samples_per_prompt=32",
            "--set",
            "train.pretrain_batch=32",
            "--set",
            "train.eval_interval=0",
        ])
        .env("DIFFNASH_OUT_ROOT", dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = dir.path().join("run_a");
    let echoed = run_dir.join("config.resolved.toml");
    assert!(echoed.exists());
    // The echo carries the override, not the file's value.
    assert!(std::fs::read_to_string(&echoed).unwrap().contains("t_max = 20"));
    assert!(run_dir.join("final.ckpt").exists());
    assert!(run_dir.join("metrics.jsonl").exists());
    assert!(Path::new(&repo_file("configs/default.toml")).exists());
}
