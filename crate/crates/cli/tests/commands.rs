mod common;

use std::path::Path;
use std::process::Command;

use cepmine_cli::commands::{complete_formula, gen_data, infer_schema, load_stream, window_counts, write_counts, CompleteOptions};
use cepmine_core::bayes::BayesBudget;
use cepmine_core::matcher::CompiledPattern;
use cepmine_core::pattern::parse_pattern;
use cepmine_core::rank::balanced_accuracy;
use cepmine_core::synth::TargetsFile;
use common::write_run;
use serde_json::{json, Value};

fn cepmine(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cepmine")).args(args).current_dir(dir).env("RUST_LOG", "warn").output().unwrap()
}

fn corpus_csv(dir: &Path, rows: usize, seed: u64) -> std::path::PathBuf {
    let path = dir.join(format!("s{seed}.csv"));
    gen_data(&path, &TargetsFile::default_corpus(), rows, seed).unwrap();
    path
}

#[test]
fn gen_data_is_seeded_and_readable() {
    let dir = tempfile::tempdir().unwrap();
    let a = corpus_csv(dir.path(), 300, 5);
    let b = dir.path().join("again.csv");
    gen_data(&b, &TargetsFile::default_corpus(), 300, 5).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let c = corpus_csv(dir.path(), 300, 6);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    let stream = load_stream(&a, &TargetsFile::default_corpus().schema).unwrap();
    assert_eq!(stream.len(), 300);
}

#[test]
fn inferred_schema_reads_types_and_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    std::fs::write(&path, "ts,type,temp,load\n0,B,1,2\n1,A,3,\n2,B,4,5\n").unwrap();
    let s = infer_schema(&path).unwrap();
    assert_eq!(s.event_types(), ["B", "A"]);
    assert_eq!(s.attributes(), ["temp", "load"]);
    assert_eq!(s.operators().len(), 3);
    std::fs::write(&path, "time,kind\n0,A\n").unwrap();
    assert!(infer_schema(&path).is_err());
}

#[test]
fn window_counts_cover_every_window() {
    let dir = tempfile::tempdir().unwrap();
    let schema = TargetsFile::default_corpus().schema;
    let stream = load_stream(&corpus_csv(dir.path(), 205, 1), &schema).unwrap();
    let p = parse_pattern("EVENTS SEQ(A a, B b) WHERE b.x > a.x WITHIN 5s", &schema).unwrap();
    let counts = window_counts(&p, &stream, &schema, 40, u64::MAX).unwrap();
    assert_eq!(counts.len(), 6);
    let compiled = CompiledPattern::compile(&p, &schema, 1e-6).unwrap();
    for (i, c) in counts.iter().enumerate() {
        let w = stream.window_at(i, 40).unwrap();
        assert_eq!(c.count, compiled.count(&w.records, u64::MAX).count);
        assert!(!c.capped);
    }
    assert!(counts.iter().any(|c| c.count > 0));
    let capped = window_counts(&p, &stream, &schema, 40, 1).unwrap();
    assert!(capped.iter().all(|c| c.count <= 1));
    assert!(capped.iter().zip(&counts).all(|(c, full)| c.capped == (full.count > 1)));
    assert!(window_counts(&p, &stream, &schema, 0, 10).is_err());

    let mut out = Vec::new();
    write_counts(&mut out, &counts[..2]).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text, format!("window_index,count,capped\n0,{},false\n1,{},false\n", counts[0].count, counts[1].count));
}

#[test]
fn completion_fills_holes_and_reports_its_objective() {
    let dir = tempfile::tempdir().unwrap();
    let schema = TargetsFile::default_corpus().schema;
    let stream = load_stream(&corpus_csv(dir.path(), 400, 2), &schema).unwrap();
    let formula = parse_pattern("EVENTS SEQ(A a, B b) WHERE b.x > ?1 WITHIN 5s", &schema).unwrap();
    let opts = CompleteOptions { window_len: 40, cap: u64::MAX, eq_eps: 1e-6, budget: BayesBudget::default(), seed: 0 };
    let c = complete_formula(&formula, &stream, &schema, &opts).unwrap();
    assert!(!c.pattern.has_holes());
    assert!(c.evaluations <= 30);
    assert_eq!(c.pattern.events.len(), formula.events.len());
    assert_eq!(c.pattern.within_seconds, formula.within_seconds);
    let compiled = CompiledPattern::compile(&c.pattern, &schema, 1e-6).unwrap();
    let total: u64 = (0..stream.window_count(40)).map(|i| compiled.count(&stream.window_at(i, 40).unwrap().records, u64::MAX).count).sum();
    assert_eq!(total as f64, c.best_value);
    assert!(c.history.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn binary_match_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let out = cepmine(&["gen-data", "--out", "s.csv", "--rows", "120", "--seed", "3"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let pattern = "EVENTS SEQ(A a, B b) WHERE b.x > a.x WITHIN 5s";
    std::fs::write(dir.path().join("p.txt"), pattern).unwrap();
    let inline = cepmine(&["match", "--pattern", pattern, "--data", "s.csv", "--window-len", "40"], dir.path());
    assert!(inline.status.success(), "{}", String::from_utf8_lossy(&inline.stderr));
    let from_file = cepmine(&["match", "--pattern", "p.txt", "--data", "s.csv", "--window-len", "40"], dir.path());
    assert_eq!(inline.stdout, from_file.stdout);
    let text = String::from_utf8(inline.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "window_index,count,capped");
    assert_eq!(lines.len(), 4);

    let wide = cepmine(&["match", "--pattern", pattern, "--data", "s.csv", "--within", "50"], dir.path());
    let sum = |t: &str| -> u64 { t.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse::<u64>().unwrap()).sum() };
    assert!(sum(&String::from_utf8(wide.stdout).unwrap()) >= sum(&text));

    let bad = cepmine(&["match", "--pattern", "EVENTS SEQ(Z a) WHERE true WITHIN 5s", "--data", "s.csv"], dir.path());
    assert!(!bad.status.success());
    assert!(!bad.stderr.is_empty());

    let done = cepmine(&["complete", "--pattern", "EVENTS SEQ(A a, B b) WHERE b.x < ?1 WITHIN 5s", "--data", "s.csv"], dir.path());
    assert!(done.status.success(), "{}", String::from_utf8_lossy(&done.stderr));
    let completed = String::from_utf8(done.stdout).unwrap();
    assert!(!completed.contains('?'), "{completed}");
    let log = String::from_utf8(done.stderr).unwrap();
    assert!(log.contains("iteration,best_count"));
    assert!(log.contains("evaluations:"));
}

#[test]
fn binary_train_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = TargetsFile::default_corpus();
    let config = write_run(
        dir.path(),
        json!({"kind": "simulated", "sigma": 0.0, "targets": corpus.targets}),
        json!({"epochs": 2, "episodes_per_epoch": 20, "interact_every_episodes": 10, "predictor_epochs": 5}),
    );
    let out = cepmine(&["train", "--config", config.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("out");
    let metrics = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    let epochs: Vec<u64> = metrics.lines().map(|l| serde_json::from_str::<Value>(l).unwrap()["epoch"].as_u64().unwrap()).collect();
    assert_eq!(epochs, [0, 1]);
    for f in ["patterns.json", "run_config.json", "timing.jsonl", "checkpoints/agent.json", "checkpoints/meta.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }

    let ck = run.join("checkpoints");
    let labeled = ck.join("labeled.jsonl");
    let eval = cepmine(
        &["evaluate", "--checkpoint", ck.to_str().unwrap(), "--dprime", labeled.to_str().unwrap(), "--dump", "preds.json"],
        dir.path(),
    );
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let summary: Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(summary["acc_train"], summary["acc_dprime"]);
    let dump: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("preds.json")).unwrap()).unwrap();
    let preds = dump["predictions"].as_array().unwrap();
    assert_eq!(preds.len() as u64, summary["n_dprime"].as_u64().unwrap());
    let p: Vec<u32> = preds.iter().map(|x| x["predicted"].as_u64().unwrap() as u32).collect();
    let l: Vec<u32> = preds.iter().map(|x| x["label"].as_u64().unwrap() as u32).collect();
    let recomputed = balanced_accuracy(&p, &l, 5).unwrap();
    assert!((recomputed - summary["acc_dprime"].as_f64().unwrap()).abs() < 1e-12);

    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let empty = cepmine(&["evaluate", "--checkpoint", ck.to_str().unwrap(), "--dprime", "empty.jsonl"], dir.path());
    assert!(!empty.status.success());
    assert!(String::from_utf8_lossy(&empty.stderr).contains("no labeled patterns"));
}

#[test]
fn binary_train_with_zero_epochs_writes_initial_state() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = TargetsFile::default_corpus();
    let config = write_run(dir.path(), json!({"kind": "simulated", "targets": corpus.targets}), json!({"epochs": 0}));
    let out = cepmine(&["train", "--config", config.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(dir.path().join("out/metrics.jsonl")).unwrap(), "");
    assert!(dir.path().join("out/checkpoints/predictor.json").is_file());
}

#[test]
fn binary_rejects_unknown_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = TargetsFile::default_corpus();
    let config = write_run(dir.path(), json!({"kind": "simulated", "targets": corpus.targets}), json!({"epochs": 0}));
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&config).unwrap()).unwrap();
    v["schedule"]["epoch_count"] = json!(3);
    std::fs::write(&config, v.to_string()).unwrap();
    let out = cepmine(&["train", "--config", config.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch_count"));
}
