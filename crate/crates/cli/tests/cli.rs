use std::path::Path;
use std::process::{Command, Output};

fn pkground(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pkground"))
        .args(args)
        .current_dir(dir)
        .env("SOURCE_DATE_EPOCH", "0")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn help_documents_flags() {
    let dir = tempfile::tempdir().unwrap();
    let top = pkground(dir.path(), &["--help"]);
    assert_eq!(top.status.code(), Some(0));
    for sub in [
        "validate",
        "synth",
        "ground",
        "eval-grounding",
        "export-finetune",
        "decode",
        "eval-gen",
        "sweep",
    ] {
        assert!(stdout(&top).contains(sub), "{sub}");
    }
    let decode = pkground(dir.path(), &["decode", "--help"]);
    assert_eq!(decode.status.code(), Some(0));
    for flag in [
        "--seed",
        "--threshold",
        "--mode",
        "--beam",
        "--min-len",
        "--max-len",
        "--alpha",
        "--top-p",
        "--scorer",
        "--lm",
        "--jobs",
    ] {
        assert!(stdout(&decode).contains(flag), "{flag}");
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = pkground(dir.path(), &["ground", "--threshold", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("1.5"));
    assert_eq!(pkground(dir.path(), &["ground", "--bogus"]).status.code(), Some(1));
    assert_eq!(pkground(dir.path(), &[]).status.code(), Some(1));
    let o = pkground(
        dir.path(),
        &["decode", "--lm", "tabular:x.json", "--min-len", "9", "--max-len", "3"],
    );
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert_eq!(
        pkground(dir.path(), &["ground", "--scorer", "oracle"]).status.code(),
        Some(1)
    );
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = pkground(dir.path(), &["eval-grounding"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("corpus.jsonl"));
}

#[test]
fn unreachable_scorer_names_the_url() {
    let dir = tempfile::tempdir().unwrap();
    assert!(pkground(dir.path(), &["synth", "--count", "2"]).status.success());
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let url = format!("http://127.0.0.1:{port}");
    let o = pkground(dir.path(), &["ground", "--scorer", &format!("http:{url}")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(&url), "{}", stderr(&o));
    assert!(!dir.path().join("predictions.jsonl.manifest.json").exists());
}

#[test]
fn validate_reports_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    let good = r#"{"id": "a", "dialogue": ["hi"], "personas": ["p"], "knowledge": ["k"], "gold_knowledge": 0}"#;
    let bad_index = r#"{"id": "b", "dialogue": ["hi"], "personas": ["p"], "knowledge": ["k"], "gold_knowledge": 4}"#;
    let duplicate = r#"{"id": "a", "dialogue": ["hi"], "personas": [""], "knowledge": ["k"]}"#;
    std::fs::write(
        dir.path().join("corpus.jsonl"),
        format!("{good}\n{bad_index}\n{duplicate}\n"),
    )
    .unwrap();
    let o = pkground(dir.path(), &["validate", "--report", "report.json"]);
    assert_eq!(o.status.code(), Some(2));
    let out = stdout(&o);
    assert!(out.contains("instance 2 (b): index out of range"), "{out}");
    assert!(out.contains("empty persona at index 0"), "{out}");
    assert!(out.contains("duplicate id at positions 1 and 3"), "{out}");
    assert!(out.contains("3 violation(s)"), "{out}");
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["violations"].as_array().unwrap().len(), 3);

    std::fs::write(dir.path().join("corpus.jsonl"), format!("{good}\n")).unwrap();
    assert_eq!(pkground(dir.path(), &["validate"]).status.code(), Some(0));
    std::fs::write(dir.path().join("corpus.jsonl"), "{\"id\": \"x\", \"colour\": 1}\n").unwrap();
    assert_eq!(pkground(dir.path(), &["validate"]).status.code(), Some(2));
}

#[test]
fn beam_of_one_matches_greedy_reference() {
    let dir = tempfile::tempdir().unwrap();
    // greedy: "a" (0.6), then "b" (0.7), then EOS (1.0)
    std::fs::write(
        dir.path().join("toy.json"),
        r#"{"vocab": ["EOS", "a", "b"], "eos": "EOS",
            "transitions": {"": {"a": 0.6, "b": 0.4}, "a": {"EOS": 0.3, "b": 0.7}, "*": {"EOS": 1.0}}}"#,
    )
    .unwrap();
    assert!(pkground(dir.path(), &["synth", "--count", "5"]).status.success());
    let o = pkground(
        dir.path(),
        &[
            "decode",
            "--lm",
            "tabular:toy.json",
            "--strategy",
            "beam",
            "--beam",
            "1",
            "--alpha",
            "0",
            "--min-len",
            "1",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let hyps = std::fs::read_to_string(dir.path().join("hyps.jsonl")).unwrap();
    assert_eq!(hyps.lines().count(), 5);
    assert!(hyps.lines().all(|l| l.ends_with(r#""text":"a b"}"#)), "{hyps}");
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("hyps.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "decode");
    assert_eq!(manifest["config"]["decode"]["beam_size"], 1);
    assert_eq!(manifest["backends"]["language_model"], "tabular:toy.json");
    assert_eq!(manifest["started_at"], "1970-01-01T00:00:00Z");
    assert!(manifest["inputs"]["toy.json"].as_str().unwrap().len() == 64);
}

#[test]
fn sweep_failure_names_the_value() {
    let dir = tempfile::tempdir().unwrap();
    assert!(pkground(dir.path(), &["synth", "--count", "3"]).status.success());
    std::fs::write(
        dir.path().join("sweep.json"),
        r#"{"axis": "threshold", "values": [0.5, 1.5], "corpus": "corpus.jsonl", "out": "t.txt"}"#,
    )
    .unwrap();
    let o = pkground(dir.path(), &["sweep"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("1.5"), "{}", stderr(&o));
    assert!(!dir.path().join("t.txt").exists());
}

#[test]
fn sweep_rows_match_direct_runs() {
    let dir = tempfile::tempdir().unwrap();
    assert!(pkground(dir.path(), &["synth", "--count", "40"]).status.success());
    std::fs::create_dir(dir.path().join("specs")).unwrap();
    std::fs::write(
        dir.path().join("specs/modes.json"),
        r#"{"axis": "grounding_mode", "values": ["pd_k", "d_k"], "corpus": "../corpus.jsonl", "out": "modes.txt"}"#,
    )
    .unwrap();
    let o = pkground(dir.path(), &["sweep", "--spec", "specs/modes.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("specs/modes.txt.json")).unwrap()).unwrap();
    for (row, mode) in ["pd_k", "d_k"].iter().enumerate() {
        assert!(pkground(dir.path(), &["ground", "--mode", mode]).status.success());
        assert!(pkground(dir.path(), &["eval-grounding"]).status.success());
        let direct: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join("grounding_scores.json")).unwrap()).unwrap();
        assert_eq!(table["rows"][row]["cells"][0], direct["knowledge_accuracy"], "{mode}");
        assert_eq!(table["rows"][row]["cells"][1], direct["persona_accuracy"], "{mode}");
    }
}
