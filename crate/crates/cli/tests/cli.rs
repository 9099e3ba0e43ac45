use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fsum(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsum"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = fsum(dir, args);
    assert!(
        out.status.success(),
        "fsum {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(String::from)
        .collect()
}

const KB3: &str = r#"{"concept_id":"C1","preferred_name":"cardiomegaly","semantic_type":"finding","definition":"enlarged heart"}
{"concept_id":"C2","preferred_name":"pleural effusion","semantic_type":"finding","definition":"fluid in the pleural space"}
{"concept_id":"C3","preferred_name":"edema","semantic_type":"finding","definition":"fluid in tissue"}
"#;

#[test]
fn build_kb_reports_document_count() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("kb.jsonl"), KB3).unwrap();
    let out = ok(dir.path(), &["build-kb"]);
    assert!(out.lines().any(|l| l == "docs=3"), "{out}");
    assert!(dir.path().join("out/kb.index").exists());
}

#[test]
fn build_kb_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let dup = format!("{KB3}{}\n", KB3.lines().next().unwrap());
    fs::write(dir.path().join("kb.jsonl"), dup).unwrap();
    let out = fsum(dir.path(), &["build-kb"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("build-kb") && err.contains("lines 1 and 4"), "{err}");

    let out = fsum(dir.path(), &["build-kb", "--kb", "missing.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_override_and_missing_records_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = fsum(dir.path(), &["--set", "train.epoch=3", "synth"]);
    assert_eq!(out.status.code(), Some(1));
    let out = fsum(dir.path(), &["prepare"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: prepare:"));
}

const SMALL: [&str; 8] = [
    "--set",
    "model.embed_dim=16",
    "--set",
    "model.hidden_dim=32",
    "--set",
    "corpus.max_tgt_len=24",
    "--set",
    "model.num_heads=2",
];

fn args<'a>(extra: &[&'a str], cmd: &'a str) -> Vec<&'a str> {
    let mut v: Vec<&str> = SMALL.to_vec();
    v.extend_from_slice(extra);
    v.push(cmd);
    v
}

#[test]
fn prepare_writes_one_triple_per_record() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--set", "synth.n_records=10", "synth"]);
    let out = ok(d, &["prepare"]);
    assert!(out.starts_with("train=8 validation=1 test=1"), "{out}");
    for (split, n) in [("train", 8), ("validation", 1), ("test", 1)] {
        assert_eq!(lines(&d.join(format!("out/triples.{split}.jsonl"))).len(), n);
        assert_eq!(lines(&d.join(format!("out/records.{split}.jsonl"))).len(), n);
    }
}

#[test]
fn retriever_k_override_caps_facts_per_entity() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--set", "synth.n_records=30", "synth"]);
    ok(d, &["--set", "retriever.k=3", "--set", "corpus.max_src_len=1000", "prepare"]);
    for line in lines(&d.join("out/triples.train.jsonl")) {
        let t: Value = serde_json::from_str(&line).unwrap();
        let ids = |v: &Value| -> Vec<u64> { v.as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).collect() };
        let chain = ids(&t["ent"]["src"]);
        let facts = ids(&t["know"]["src"]);
        let mentions = if chain.len() > 2 { chain.iter().filter(|&&i| i == 4).count() + 1 } else { 0 };
        let n_facts = if facts.len() > 2 { facts.iter().filter(|&&i| i == 5).count() + 1 } else { 0 };
        assert!(n_facts <= 3 * mentions, "{n_facts} facts for {mentions} mentions");
        assert!(mentions > 0 && n_facts > 0);
    }
}

#[test]
fn evaluate_writes_one_row_per_test_record() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--set", "synth.n_records=40", "synth"]);
    ok(d, &args(&[], "prepare"));
    ok(d, &args(&["--set", "train.epochs=1"], "train"));
    let out = ok(d, &args(&[], "evaluate"));
    let test = lines(&d.join("out/records.test.jsonl")).len();
    assert!(out.starts_with(&format!("rows={test} ")), "{out}");
    let csv = lines(&d.join("out/report.csv"));
    assert_eq!(csv.len(), test + 2);
    assert!(csv.last().unwrap().starts_with("MEAN,"));
    let json: Value = serde_json::from_str(&fs::read_to_string(d.join("out/report.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), test);
}

#[test]
fn tune_with_full_budget_returns_exhaustive_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--set", "synth.n_records=12", "synth"]);
    ok(d, &args(&[], "prepare"));
    let extra = ["--set", "tune.budget=27", "--set", "tune.epochs=1", "--set", "tune.configuration=triple_moo"];
    let out = ok(d, &args(&extra, "tune"));
    assert!(out.starts_with("evaluations=27 "), "{out}");
    let r: Value = serde_json::from_str(&fs::read_to_string(d.join("out/tune.json")).unwrap()).unwrap();
    let evaluated = r["evaluated"].as_array().unwrap();
    assert_eq!(evaluated.len(), 27);
    let min = evaluated
        .iter()
        .filter_map(|e| e["validation_loss"].as_f64())
        .fold(f64::INFINITY, f64::min);
    assert_eq!(r["best"]["validation_loss"].as_f64().unwrap(), min);

    // Untuned training uses the preset; `--tuned` picks up the best point.
    let out = ok(d, &args(&["--set", "train.epochs=1"], "train"));
    assert!(out.starts_with("lambdas=(0.7, 0.1, 0.4)"), "{out}");
    let b = &r["best"]["lambdas"];
    let out = ok(d, &{
        let mut v = args(&["--set", "train.epochs=1"], "train");
        v.push("--tuned");
        v
    });
    let want = format!(
        "lambdas=({}, {}, {})",
        b["lambda_gen"].as_f64().unwrap(),
        b["lambda_k"].as_f64().unwrap(),
        b["lambda_e"].as_f64().unwrap()
    );
    assert!(out.starts_with(&want), "{out} vs {want}");
}

#[test]
fn summarize_reproduces_a_memorized_impression() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--set", "synth.n_records=8", "synth"]);
    let split = [
        "--set", "corpus.train_n=8", "--set", "corpus.val_n=0", "--set", "corpus.test_n=0",
        "--set", "corpus.max_src_len=48",
    ];
    ok(d, &args(&split, "prepare"));
    // Validate on the training split itself.
    fs::copy(d.join("out/triples.train.jsonl"), d.join("out/triples.validation.jsonl")).unwrap();
    let big = [
        "--set", "model.embed_dim=32", "--set", "model.hidden_dim=64", "--set", "model.num_heads=4",
        "--set", "corpus.max_src_len=48", "--set", "corpus.max_tgt_len=24",
        "--set", "train.epochs=150", "--set", "train.batch_size=4", "--set", "train.learning_rate=0.003",
    ];
    ok(d, &[&big[..], &["train"]].concat());
    let rec: Value = serde_json::from_str(&lines(&d.join("out/records.train.jsonl"))[0]).unwrap();
    let findings = rec["findings"].as_str().unwrap();
    let out = ok(d, &[&big[..], &["summarize", findings]].concat());
    let expected = fsum::corpus::normalize(rec["impression"].as_str().unwrap());
    assert_eq!(out.trim(), expected);
}
