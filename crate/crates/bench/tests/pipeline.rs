mod common;

use std::collections::BTreeMap;
use std::fs;
use std::process::Command;

use coi_bench::artifacts::{read_jsonl, AGGREGATE, ANSWER_FAILURES, EXPLANATIONS, MANIFEST};
use coi_bench::config::BankConfig;
use coi_bench::pipeline::AnswerRecord;
use coi_bench::{run_experiment, FailureRecord, Metric, Workspace};
use coi_core::prompting::{GeneratorProviderConfig, Mode};
use coi_core::scripted::Responder;

#[test]
fn genai_only_never_retrieves() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = common::golden(tmp.path());
    cfg.modes = vec![Mode::Genai];
    let report = run_experiment(cfg).unwrap();
    assert_eq!(report.retrieval_requests, 0);
    assert_eq!(report.items, 12);
    assert!(report.is_complete());
    assert!(report.analysis.comparisons.is_empty());
}

#[test]
fn empty_bank_makes_rag_coi_identical_to_rag() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = common::golden(tmp.path());
    cfg.bank = BankConfig::None;
    cfg.modes = vec![Mode::Rag, Mode::RagCoi];
    let report = run_experiment(cfg).unwrap();
    assert!(report.is_complete());
    let answers: Vec<AnswerRecord> = read_jsonl(&tmp.path().join("out").join(EXPLANATIONS)).unwrap();
    let mut by_key: BTreeMap<(String, String), Vec<&AnswerRecord>> = BTreeMap::new();
    for a in &answers {
        by_key
            .entry((a.explanation.question_id.clone(), a.explanation.model_id.clone()))
            .or_default()
            .push(a);
    }
    assert_eq!(by_key.len(), 12);
    for pair in by_key.values() {
        let [x, y] = pair.as_slice() else { panic!("expected two modes") };
        assert_ne!(x.explanation.mode, y.explanation.mode);
        assert_eq!(x.prompt_sha256, y.prompt_sha256);
        assert_eq!(x.explanation.text, y.explanation.text);
        assert_eq!(x.retrieved_chunk_ids, y.retrieved_chunk_ids);
    }
}

#[test]
fn single_question_reports_na_intervals() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = common::golden(tmp.path());
    let q = fs::read_to_string(&cfg.questions).unwrap();
    let one = tmp.path().join("one.jsonl");
    fs::write(&one, q.lines().next().unwrap()).unwrap();
    cfg.questions = one;
    cfg.models.truncate(1);
    cfg.modes = vec![Mode::Rag, Mode::RagCoi];
    let report = run_experiment(cfg).unwrap();
    assert_eq!(report.items, 2);
    for d in &report.analysis.descriptives {
        assert_eq!(d.n, 1);
        assert!(d.ci95.is_none());
    }
    let c = report.analysis.comparison("mock-a", Metric::Factscore).unwrap();
    assert!(c.test.is_none() && c.note.is_some());
    let csv = fs::read_to_string(tmp.path().join("out").join(AGGREGATE)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "model,mode,metric,median,mean,ci_lo,ci_hi,p_one_sided,p_bh_adjusted,dz,n");
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[5], "NA");
        assert_eq!(cols[6], "NA");
        assert_eq!(cols[10], "1");
    }
}

fn add_failing_model(cfg: &mut coi_bench::ExperimentConfig) {
    cfg.models.push(GeneratorProviderConfig::Scripted {
        model_id: "mock-broken".into(),
        script: BTreeMap::new(),
        responder: Responder::Fail,
    });
}

#[test]
fn failures_are_accounted_for() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = common::golden(tmp.path());
    cfg.modes = vec![Mode::Genai, Mode::Rag];
    add_failing_model(&mut cfg);
    let report = run_experiment(cfg).unwrap();
    assert_eq!(report.expected_items, 6 * 3 * 2);
    assert_eq!(report.items + report.failures.len(), report.expected_items);
    assert_eq!(report.failures.len(), 12);
    assert!(!report.is_complete());
    assert!(report.failures.iter().all(|f| f.model_id == "mock-broken" && f.stage == "answer"));
    let logged: Vec<FailureRecord> = read_jsonl(&tmp.path().join("out").join(ANSWER_FAILURES)).unwrap();
    assert_eq!(logged, report.failures);
}

#[test]
fn stages_can_run_separately() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = common::golden(tmp.path());
    cfg.models.truncate(1);
    let ws = Workspace::new(cfg).unwrap();
    let questions = ws.questions().unwrap();
    assert!(ws.evaluate().is_err(), "evaluate before answer must fail");
    let counts = ws.ingest().unwrap();
    assert!(counts.values().all(|&n| n > 10));
    let banks = ws.build_banks().unwrap();
    assert_eq!(banks.len(), 2);
    let plans = ws.plan(&questions).unwrap();
    assert_eq!(plans.len(), 6);
    for p in plans.values() {
        let p = p.as_ref().unwrap();
        assert!(!p.selected.is_empty() && p.selected.len() <= 5);
    }
    let (answers, failures) = ws.answer(&questions).unwrap();
    assert_eq!((answers.len(), failures.len()), (18, 0));
    let (items, failures) = ws.evaluate().unwrap();
    assert_eq!((items.len(), failures.len()), (18, 0));
    ws.analyze().unwrap();
    ws.report().unwrap();
    let manifest: Vec<coi_bench::artifacts::ManifestEntry> =
        serde_json::from_slice(&fs::read(tmp.path().join("out").join(MANIFEST)).unwrap()).unwrap();
    let paths: Vec<&str> = manifest.iter().map(|e| e.path.as_str()).collect();
    let mut sorted = paths.clone();
    sorted.sort();
    assert_eq!(paths, sorted);
    assert!(paths.contains(&"plots/factscore.svg"));
    assert!(paths.contains(&"corpora/python/chunks.jsonl"));
    assert!(!paths.contains(&MANIFEST));
}

#[test]
fn cli_exit_code_reflects_partial_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let src = fs::read_to_string(common::golden_dir().join("config.toml")).unwrap();
    let base = common::golden_dir();
    let text = src
        .replace("\"questions.jsonl\"", &format!("{:?}", base.join("questions.jsonl")))
        .replace("\"docs/", &format!("\"{}/docs/", base.display()))
        .replace("modes = [\"genai\", \"rag\", \"rag_coi\"]", "modes = [\"genai\"]")
        + "\n[[models]]\nkind = \"scripted\"\nmodel_id = \"mock-broken\"\n";
    let config = tmp.path().join("config.toml");
    fs::write(&config, text).unwrap();
    let bin = env!("CARGO_BIN_EXE_coi-bench");
    let strict = Command::new(bin).args(["--config", config.to_str().unwrap(), "run"]).output().unwrap();
    assert_eq!(strict.status.code(), Some(2), "{}", String::from_utf8_lossy(&strict.stderr));
    let lenient = Command::new(bin)
        .args(["--config", config.to_str().unwrap(), "--allow-partial", "run"])
        .output()
        .unwrap();
    assert!(lenient.status.success(), "{}", String::from_utf8_lossy(&lenient.stderr));
    assert!(tmp.path().join("out").join(AGGREGATE).is_file());
}
