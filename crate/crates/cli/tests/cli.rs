//! Command-line behavior: exit codes per failure category, flag errors that
//! name the flag, and the --config overlay.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_causatext")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn write_dataset(path: &Path) {
    let mut csv = String::from("id,text,cause,inference\n");
    for i in 0..30 {
        csv.push_str(&format!("p{i},some words here w{i},{},\n", i % 6));
    }
    std::fs::write(path, csv).unwrap();
}

#[test]
fn unknown_subcommand_exits_2_with_usage() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.to_lowercase().contains("usage"), "{stderr}");
}

#[test]
fn train_without_data_names_the_flag() {
    let out = run(&["train", "--arch", "cnn", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--data"), "{stderr}");
}

#[test]
fn missing_input_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "prepare",
        "--data",
        dir.path().join("nope.csv").to_str().unwrap(),
        "--train",
        "1",
        "--val",
        "0",
        "--test",
        "0",
        "--seed",
        "1",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("prepare"), "provenance missing: {stderr}");
}

#[test]
fn schema_violation_exits_4_naming_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    std::fs::write(&data, "id,text,cause\na,ok,1\nb,broken,9\n").unwrap();
    let out = run(&[
        "prepare",
        "--data",
        data.to_str().unwrap(),
        "--train",
        "1",
        "--val",
        "0",
        "--test",
        "0",
        "--seed",
        "1",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("record 2"), "{stderr}");
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    write_dataset(&data);

    // Plain run with seed 2.
    let out_a = dir.path().join("a");
    let st = run(&[
        "prepare",
        "--data",
        data.to_str().unwrap(),
        "--train",
        "20",
        "--val",
        "5",
        "--test",
        "5",
        "--seed",
        "2",
        "--out",
        out_a.to_str().unwrap(),
    ]);
    assert!(st.status.success());

    // Seed 1 on the command line, overridden to 2 by the config file.
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 2}"#).unwrap();
    let out_b = dir.path().join("b");
    let st = run(&[
        "prepare",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--train",
        "20",
        "--val",
        "5",
        "--test",
        "5",
        "--seed",
        "1",
        "--out",
        out_b.to_str().unwrap(),
    ]);
    assert!(st.status.success());

    for name in ["train.jsonl", "validation.jsonl", "test.jsonl"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs: config seed not applied");
    }
}

#[test]
fn config_with_unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    write_dataset(&data);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"not_a_flag": 1}"#).unwrap();
    let out = run(&[
        "prepare",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--train",
        "1",
        "--val",
        "0",
        "--test",
        "0",
        "--seed",
        "1",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("not_a_flag"), "{stderr}");
}

#[test]
fn prepare_writes_exact_counts_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    write_dataset(&data);
    let out_dir = dir.path().join("out");
    let st = run(&[
        "prepare",
        "--data",
        data.to_str().unwrap(),
        "--train",
        "20",
        "--val",
        "4",
        "--test",
        "6",
        "--seed",
        "9",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(st.status.success());
    let count_lines = |name: &str| {
        std::fs::read_to_string(out_dir.join(name))
            .unwrap()
            .lines()
            .count()
    };
    assert_eq!(count_lines("train.jsonl"), 20);
    assert_eq!(count_lines("validation.jsonl"), 4);
    assert_eq!(count_lines("test.jsonl"), 6);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["command"], "prepare");
    assert_eq!(manifest["global_seed"], 9);
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 1);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 3);
}
