//! The `clego` binary: exit codes per failure class.

use std::fs;
use std::process::Command;

fn clego() -> Command {
    Command::new(env!("CARGO_BIN_EXE_clego"))
}

fn code(cmd: &mut Command) -> i32 {
    cmd.env("RUST_LOG", "error").output().unwrap().status.code().unwrap()
}

#[test]
fn bad_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "layers = 2\nnot_a_key = 1\n").unwrap();
    assert_eq!(code(clego().args(["generate", "--config"]).arg(&cfg)), 2);
    assert_eq!(code(clego().args(["train", "--seeds", "0"])), 2);
    assert_eq!(code(clego().args(["train", "--replay", "1.5"])), 2);
    assert_eq!(code(clego().args(["train", "--config"]).arg(tmp.path().join("missing.toml"))), 2);
}

#[test]
fn too_few_symbols_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"symbols": 3}"#).unwrap();
    assert_eq!(code(clego().args(["generate", "--out"]).arg(tmp.path().join("o")).arg("--config").arg(&cfg)), 3);
}

#[test]
fn analysis_failures_exit_5() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = tmp.path().join("empty.csv");
    fs::write(&empty, "a,b\n").unwrap();
    assert_eq!(code(clego().arg("plot").arg(&empty).arg("--out").arg(tmp.path())), 5);
    assert_eq!(code(clego().arg("analyze").arg(tmp.path().join("nothing"))), 5);
}

#[test]
fn generate_and_toml_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, "train_size = 30\ntest_size = 10\n[train]\nbatch_size = 10\n").unwrap();
    let out = clego()
        .args(["generate", "--out"])
        .arg(tmp.path().join("o"))
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 6);
    assert!(stdout.contains("30 examples") && stdout.contains("10 examples"));
}
