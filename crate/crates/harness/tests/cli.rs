use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use expobracket::report::Report;

const TINY: &str = r#"
seed = 3

[corpus]
train_dynamic = 2
train_static = 1
eval_dynamic = 3
eval_static = 1
resolution = 32

[train]
workers = 1
epochs = 2
episodes_per_epoch = 4
episodes_per_update = 2

[train.net]
branch_hidden = [8]
trunk_hidden = [8]

[train.features]
bins = 16
grid = 4

[eval]
random_episodes = 2
oracle_scenes = 2

[eval.oracle_grid]
iso = [6]
shutter = [2, 10]
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_expobracket"))
        .args(args)
        .arg("--config")
        .arg(dir.join("tiny.toml"))
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

#[test]
fn bad_invocations_exit_with_one() {
    let dir = setup();
    fs::write(dir.path().join("tiny.toml"), "[corpus]\nresolution = 4\n").unwrap();
    assert_eq!(run(dir.path(), &["generate-corpus"]).status.code(), Some(1));
    fs::write(dir.path().join("tiny.toml"), "not = [toml").unwrap();
    assert_eq!(run(dir.path(), &["generate-corpus"]).status.code(), Some(1));

    let dir = setup();
    assert_eq!(run(dir.path(), &["no-such-command"]).status.code(), Some(1));
    // No checkpoint in the output directory.
    assert_eq!(run(dir.path(), &["compare"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["compare", "--schedulers", "fixed,bogus"]).status.code(), Some(1));
}

#[test]
fn generate_corpus_is_deterministic() {
    let dir = setup();
    let out = run(dir.path(), &["generate-corpus"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = fs::read(dir.path().join("out/corpus.json")).unwrap();
    assert!(dir.path().join("out/config.toml").exists());
    assert!(run(dir.path(), &["generate-corpus"]).status.success());
    assert_eq!(first, fs::read(dir.path().join("out/corpus.json")).unwrap());
    assert!(run(dir.path(), &["generate-corpus", "--seed", "4"]).status.success());
    assert_ne!(first, fs::read(dir.path().join("out/corpus.json")).unwrap());
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = setup();
    let out_dir = dir.path().join("out");
    for cmd in [&["train"][..], &["compare", "--schedulers", "agent,fixed,snr"], &["gap"]] {
        let out = run(dir.path(), cmd);
        assert!(out.status.success(), "{cmd:?}: {}", String::from_utf8_lossy(&out.stderr));
        for line in String::from_utf8(out.stdout).unwrap().lines() {
            assert!(Path::new(line).exists(), "{line}");
        }
    }
    let report = Report::read_json(&out_dir.join("compare.json")).unwrap();
    report.check_consistency(&[0.0, 15.0, 30.0, 60.0]).unwrap();
    let mut names: Vec<_> = report.rows.iter().map(|r| r.scheduler.as_str()).collect();
    names.dedup();
    assert_eq!(names, ["agent", "fixed", "snr"]);

    let bars = out_dir.join("compare_bars.svg");
    let before = fs::read(&bars).unwrap();
    fs::remove_file(&bars).unwrap();
    let out = run(dir.path(), &["plot", out_dir.join("compare.json").to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(before, fs::read(&bars).unwrap());
}
