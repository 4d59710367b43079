mod common;

use std::path::Path;
use std::process::{Command, Output};

fn elr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elr")).current_dir(dir).args(args).output().unwrap()
}

fn error_line(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(stderr.lines().last().unwrap()).unwrap()
}

#[test]
fn train_evaluate_and_export_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let (m, videos) = common::square_videos(4, 2, 9);
    let mut csv = String::from("path,label,subject\n");
    for (e, v) in m.entries.iter().zip(&videos) {
        let name = format!("{}.elrv", e.path.display());
        elr_twostream::video::write_elrv(&dir.path().join(&name), v).unwrap();
        csv.push_str(&format!("{name},{},{}\n", e.label, e.subject));
    }
    std::fs::write(dir.path().join("manifest.csv"), csv).unwrap();
    let mut cfg = common::tiny_config(Path::new("out"));
    cfg.manifest = Some("manifest.csv".into());
    cfg.cache_dir = "cache".into();
    std::fs::write(dir.path().join("run.cfg"), cfg.to_text()).unwrap();

    let out = elr(dir.path(), &["preprocess", "--config", "run.cfg"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = elr(dir.path(), &["train", "--config", "run.cfg", "--epochs", "1", "--coupling", "false"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean ccr"));
    let log = std::fs::read_to_string(dir.path().join("out/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 2);

    let out = elr(dir.path(), &["evaluate", "--config", "run.cfg", "--coupling", "false"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let a = std::fs::read_to_string(dir.path().join("out/folds.csv")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("out/evaluation/folds.csv")).unwrap();
    assert_eq!(a, b);

    let out = elr(dir.path(), &["export-features", "--config", "run.cfg", "--coupling", "false"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let features = std::fs::read_to_string(dir.path().join("out/features/s0-fused.csv")).unwrap();
    assert_eq!(features.lines().count(), 1 + 4);

    let out = elr(dir.path(), &["export-features", "--config", "run.cfg", "--layer", "conv2"]);
    assert!(!out.status.success());
    assert_eq!(error_line(&out)["error"], "config");
}

#[test]
fn failures_print_a_json_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = elr(dir.path(), &["train", "--manifest", "missing.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let line = error_line(&out);
    assert_eq!(line["error"], "config");
    assert!(line["message"].as_str().unwrap().contains("missing.csv"));

    std::fs::write(dir.path().join("bad.cfg"), "epochz = 3\n").unwrap();
    let out = elr(dir.path(), &["train", "--config", "bad.cfg"]);
    assert!(!out.status.success());
    assert!(error_line(&out)["message"].as_str().unwrap().contains("epochz"));

    let out = elr(dir.path(), &["train", "--fusion", "product"]);
    assert!(!out.status.success());
}

#[test]
fn gradcheck_subcommand_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = elr(dir.path(), &["gradcheck", "--instances", "3", "--quiet"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}
