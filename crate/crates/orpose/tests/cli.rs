mod common;

use std::path::Path;
use std::process::{Command, Output};

fn orpose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_orpose")).args(args).output().unwrap()
}

fn stderr_error_line(o: &Output) -> String {
    let err = String::from_utf8_lossy(&o.stderr);
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("error ")).collect();
    assert_eq!(lines.len(), 1, "stderr: {err}");
    lines[0].to_string()
}

fn write_config(dir: &Path) -> String {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, common::TINY).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn existing_outputs_need_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("runs");
    let out = out.to_str().unwrap();
    let first = orpose(&["generate", "--config", &cfg, "--out", out]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert!(Path::new(out).join("seed-0/data/target_eval/manifest.json").exists());

    let again = orpose(&["generate", "--config", &cfg, "--out", out]);
    assert_eq!(again.status.code(), Some(1));
    let line = stderr_error_line(&again);
    assert!(line.starts_with("error kind=refused message="), "{line}");
    assert!(line.contains("--force"), "{line}");

    let forced = orpose(&["generate", "--config", &cfg, "--out", out, "--force", "--seed", "0"]);
    assert!(forced.status.success());
}

#[test]
fn missing_inputs_give_one_line_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("empty");
    let o = orpose(&["pretrain", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let line = stderr_error_line(&o);
    assert!(line.contains("message=\""), "{line}");

    let o = orpose(&["adapt", "--config", "/nonexistent/x.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr_error_line(&o).contains("x.toml"));
}

#[test]
fn bad_config_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "version = 1\nnot_a_field = 3\n").unwrap();
    let o = orpose(&["generate", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let line = stderr_error_line(&o);
    assert!(line.starts_with("error kind=") && line.contains("not_a_field"), "{line}");

    let o = orpose(&["adapt", "--variant", "nope", "--config", &write_config(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr_error_line(&o).contains("nope"));

    let o = orpose(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_error_line(&o).starts_with("error kind=usage"));

    let o = orpose(&["--help"]);
    assert!(o.status.success());
    let help = String::from_utf8_lossy(&o.stdout);
    for sub in ["generate", "pretrain", "train-prior", "adapt", "evaluate", "ablate", "report"] {
        assert!(help.contains(sub), "{sub} missing from help");
    }
}

#[test]
fn every_subcommand_takes_common_flags() {
    for sub in ["generate", "pretrain", "train-prior", "adapt", "evaluate", "ablate", "report"] {
        let o = orpose(&[sub, "--help"]);
        let help = String::from_utf8_lossy(&o.stdout);
        for flag in ["--config", "--seed", "--out", "--force"] {
            assert!(help.contains(flag), "{sub} lacks {flag}");
        }
    }
}
