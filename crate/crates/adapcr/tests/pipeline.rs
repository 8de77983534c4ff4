//! End-to-end tests of the command-line binary: exit codes, config-file
//! merging, log line shape, and the fixture to report chain.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adapcr")).args(args).output().expect("binary runs")
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).to_string()
}

fn path_str(path: &Path) -> String {
    path.to_str().expect("utf-8 path").to_string()
}

/// Generate a small verified fixture into `dir` and return its file paths.
fn make_fixture(dir: &Path) -> (String, String) {
    let out = run(&[
        "fixture",
        "--kind",
        "single_hop",
        "--n",
        "8",
        "--corpus-size",
        "60",
        "--seed",
        "3",
        "--out-dir",
        &path_str(dir),
    ]);
    assert!(out.status.success(), "fixture failed: {}", stderr_of(&out));
    (path_str(&dir.join("corpus.jsonl")), path_str(&dir.join("dataset.jsonl")))
}

// ── Exit codes ──────────────────────────────────────────────────────────────

#[test]
fn help_exits_zero_and_prints_usage() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("retrieve"), "{text}");
    assert!(text.contains("gradcheck"), "{text}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["retrieve", "--warp-speed"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_required_setting_is_a_config_error() {
    let out = run(&["ingest"]);
    assert_eq!(out.status.code(), Some(3));
    let err = stderr_of(&out);
    assert!(err.contains("config_error"), "{err}");
    assert!(err.contains("corpus"), "{err}");
}

#[test]
fn missing_input_file_is_a_runtime_error() {
    let out = run(&["ingest", "--corpus", "/nonexistent/corpus.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_of(&out).contains("runtime_error"));
}

#[test]
fn eval_rerank_arm_without_trained_head_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, dataset) = make_fixture(dir.path());
    let out = run(&[
        "eval",
        "--dataset",
        &dataset,
        "--corpus",
        &corpus,
        "--out-dir",
        &path_str(&dir.path().join("report")),
        "--systems",
        "adapcr,adapcr_rerank",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_of(&out).contains("head-trained"));
}

// ── Config file ─────────────────────────────────────────────────────────────

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, "k = 3\nchunk = 9\n").unwrap();
    let out = run(&["retrieve", "--config", &path_str(&conf)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr_of(&out).contains("chunk"));
}

#[test]
fn config_file_fills_settings_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, dataset) = make_fixture(dir.path());
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, "k = 3\ndim = 64\nsubcorpus_limit = 60\n").unwrap();

    // k comes from the file: pool is 3 singles + 3*2 pairs.
    let from_file = dir.path().join("from_file.jsonl");
    let out = run(&[
        "retrieve",
        "--config",
        &path_str(&conf),
        "--corpus",
        &corpus,
        "--questions",
        &dataset,
        "--output",
        &path_str(&from_file),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert_eq!(first_pool_size(&from_file), 9);

    // An explicit flag beats the file: pool is 2 singles + 2*1 pairs.
    let from_flag = dir.path().join("from_flag.jsonl");
    let out = run(&[
        "retrieve",
        "--config",
        &path_str(&conf),
        "--corpus",
        &corpus,
        "--questions",
        &dataset,
        "--k",
        "2",
        "--output",
        &path_str(&from_flag),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert_eq!(first_pool_size(&from_flag), 4);
}

fn first_pool_size(path: &Path) -> u64 {
    let content = std::fs::read_to_string(path).expect("retrieval output exists");
    let first: serde_json::Value =
        serde_json::from_str(content.lines().next().expect("nonempty")).expect("JSONL line");
    first["pool_size"].as_u64().expect("pool_size field")
}

// ── Logging ─────────────────────────────────────────────────────────────────

#[test]
fn stderr_is_json_lines_with_the_documented_fields() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "fixture",
        "--kind",
        "redundant",
        "--n",
        "5",
        "--corpus-size",
        "40",
        "--seed",
        "2",
        "--out-dir",
        &path_str(&dir.path().join("fx")),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let err = stderr_of(&out);
    let lines: Vec<&str> = err.lines().filter(|l| !l.trim().is_empty()).collect();
    assert!(!lines.is_empty(), "expected log events on stderr");
    for line in lines {
        let event: serde_json::Value =
            serde_json::from_str(line).unwrap_or_else(|e| panic!("bad log line {line:?}: {e}"));
        assert!(event["ts"].is_number(), "{line}");
        assert!(event["level"].is_string(), "{line}");
        assert!(event["event"].is_string(), "{line}");
        assert!(event["fields"].is_object(), "{line}");
    }
}

// ── Full chain ──────────────────────────────────────────────────────────────

#[test]
fn fixture_retrieve_train_eval_chain_produces_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (corpus, dataset) = make_fixture(dir.path());

    let retrieved = dir.path().join("retrieved.jsonl");
    let out = run(&[
        "retrieve",
        "--corpus",
        &corpus,
        "--questions",
        &dataset,
        "--output",
        &path_str(&retrieved),
        "--dim",
        "64",
        "--subcorpus-limit",
        "60",
    ]);
    assert!(out.status.success(), "retrieve failed: {}", stderr_of(&out));
    let retrieved_text = std::fs::read_to_string(&retrieved).unwrap();
    assert_eq!(retrieved_text.lines().count(), 8);
    for line in retrieved_text.lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(record["question_idx"].is_u64());
        assert!(record["winner"]["passage_ids"].is_array());
        assert!(record["winner"]["score"].is_number());
        assert!(record["pool_size"].is_u64());
    }

    let head = dir.path().join("head.json");
    let curve = dir.path().join("curve.csv");
    let out = run(&[
        "train",
        "--dataset",
        &dataset,
        "--corpus",
        &corpus,
        "--out-head",
        &path_str(&head),
        "--out-curve",
        &path_str(&curve),
        "--dim",
        "64",
        "--subcorpus-limit",
        "60",
        "--epochs",
        "2",
        "--lr",
        "0.005",
    ]);
    assert!(out.status.success(), "train failed: {}", stderr_of(&out));
    let curve_text = std::fs::read_to_string(&curve).unwrap();
    assert!(curve_text.starts_with("epoch,loss,retained_examples\n"), "{curve_text}");
    assert_eq!(curve_text.lines().count(), 3, "{curve_text}");

    let report_dir = dir.path().join("report");
    let out = run(&[
        "eval",
        "--dataset",
        &dataset,
        "--corpus",
        &corpus,
        "--out-dir",
        &path_str(&report_dir),
        "--head-trained",
        &path_str(&head),
        "--dim",
        "64",
        "--subcorpus-limit",
        "60",
    ]);
    assert!(out.status.success(), "eval failed: {}", stderr_of(&out));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report_dir.join("report.json")).unwrap())
            .unwrap();
    let rows = report["rows"].as_array().expect("rows array");
    assert_eq!(rows.len(), 4);
    let markdown = std::fs::read_to_string(report_dir.join("report.md")).unwrap();
    for label in ["no_retrieval", "fixed_top2", "adapcr", "adapcr_rerank"] {
        assert!(markdown.contains(label), "report.md missing {label}");
    }
}

// ── Gradient check ──────────────────────────────────────────────────────────

#[test]
fn gradcheck_passes_and_the_corrupt_hook_fails() {
    let out = run(&["gradcheck"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    let summary: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("gradcheck prints JSON");
    assert_eq!(summary["pass"], true);
    assert_eq!(summary["results"].as_array().unwrap().len(), 3);

    let out = run(&["gradcheck", "--corrupt"]);
    assert_eq!(out.status.code(), Some(1));
    let summary: serde_json::Value =
        serde_json::from_slice(&out.stdout).expect("corrupt run still prints JSON");
    assert_eq!(summary["pass"], false);
}
