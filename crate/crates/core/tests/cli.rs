//! Command-line integration: reproducibility, sampler equivalence through
//! overrides, and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 5

[schedule]
K = 10

[sampler]
K_I = 5
K_t = 2
N = 3
ttst = false

[model]
goal_channels = [2, 3]
encoder_hidden = 6
feature_dim = 4
embed_dim = 4
width = 8
blocks = 1

[train]
epochs = 2
batch_size = 8
draws_per_window = 1

[data]
held_out = "corridor_1"

[synthetic]
scenes = 2
agents_per_scene = 6

[eval]
max_windows = 4
bench_trunk_steps = [2]
bench_repeats = 5
bench_windows = 2
"#;

fn trajlab(dir: &Path, args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_trajlab"));
    cmd.current_dir(dir)
        .env_remove("TRAJLAB_SEED")
        .env("RUST_LOG", "warn")
        .arg("--config")
        .arg(dir.join("tiny.toml"))
        .args(args);
    cmd.output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY
        .replacen("seed = 5", &format!("seed = 5\noutput_dir = {:?}", dir.path().join("run").to_str().unwrap()), 1)
        .replacen("[data]", &format!("[data]\ndir = {:?}", dir.path().join("data").to_str().unwrap()), 1);
    fs::write(dir.path().join("tiny.toml"), text).unwrap();
    ok(&trajlab(dir.path(), &["synth-data"]));
    dir
}

#[test]
fn training_twice_gives_identical_metrics() {
    let dir = setup();
    let run = dir.path().join("run");
    ok(&trajlab(dir.path(), &["train"]));
    let first = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let ckpt = fs::read(run.join("checkpoint.tlck")).unwrap();
    ok(&trajlab(dir.path(), &["train"]));
    assert_eq!(fs::read_to_string(run.join("metrics.csv")).unwrap(), first);
    assert_eq!(fs::read(run.join("checkpoint.tlck")).unwrap(), ckpt);
    assert_eq!(first.lines().count(), 3);
    assert!(first.starts_with("epoch,l_goal,l_traj,l_total,lr\n"));

    // The remaining commands run against the trained checkpoint.
    ok(&trajlab(dir.path(), &["eval"]));
    let eval = fs::read_to_string(run.join("eval.csv")).unwrap();
    assert!(eval.lines().last().unwrap().starts_with("ALL,"));
    let bench = trajlab(dir.path(), &["bench"]);
    ok(&bench);
    let table = fs::read_to_string(run.join("bench.csv")).unwrap();
    assert!(table.starts_with("sampler,K,K_I,K_t,eta,N,ade,fde,evals,ms\n"));
    assert!(table.lines().any(|l| l.starts_with("ddpm,10,5,0,") && l.contains(",30,")));
}

#[test]
fn zero_trunk_override_matches_ddim() {
    let dir = setup();
    let run = dir.path().join("run");
    ok(&trajlab(dir.path(), &["train"]));
    let trajectories = |extra: &[&str]| -> serde_json::Value {
        let mut args = vec!["predict"];
        args.extend_from_slice(extra);
        ok(&trajlab(dir.path(), &args));
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("predictions.json")).unwrap()).unwrap();
        v.as_array().unwrap().iter().map(|p| p["trajectories"].clone()).collect()
    };
    let tree = trajectories(&["--set", "sampler.K_t=0"]);
    let ddim = trajectories(&["--set", "sampler.rule=\"ddim\"", "--set", "sampler.K_t=0"]);
    assert_eq!(tree.as_array().unwrap().len(), 4);
    assert_eq!(tree, ddim);
    let trunk = trajectories(&[]);
    assert_ne!(trunk, ddim);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    fs::write(dir.path().join("tiny.toml"), format!("output_dir = {:?}\n", run.to_str().unwrap())).unwrap();
    let code = |args: &[&str]| trajlab(dir.path(), args).status.code().unwrap();
    assert_eq!(code(&["train", "--set", "train.no_such_key=1"]), 3);
    assert_eq!(code(&["train", "--set", "sampler.K_I=0"]), 3);
    assert_eq!(code(&["predict", "--set", "data.dir=\"missing\""]), 4);
    assert_eq!(code(&["frobnicate"]), 2);
    fs::write(dir.path().join("tiny.toml"), "[sampler\n").unwrap();
    assert_eq!(code(&["train"]), 3);
}
