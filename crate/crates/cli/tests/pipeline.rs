use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use dynrank_cli::pipeline::{load_labeled, Stage};
use dynrank_cli::{exit_code, run_pipeline, PipelineConfig};
use dynrank_core::classifier::{train, TrainingConfig};
use dynrank_core::taxonomy::{QuestionType, Taxonomy};

fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("demo")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn demo_config(out: &Path) -> PipelineConfig {
    let mut config = PipelineConfig::load(&demo_dir().join("config.json")).unwrap();
    config.paths.out_dir = out.to_path_buf();
    config
}

#[test]
fn demo_classifier_types_the_demo_questions() {
    let tax = Taxonomy::default_table();
    let data = load_labeled(&demo_dir().join("qc_train.jsonl"), &tax).unwrap();
    let config = TrainingConfig {
        epochs: 50,
        ..Default::default()
    };
    let model = train(&data, &tax, &config).unwrap();
    assert_eq!(
        model.classify("who plays ken barlow in coronation street?"),
        QuestionType::new("HUM", "ind")
    );
    assert_eq!(
        model.classify("when is the next deadpool movie being released?"),
        QuestionType::new("NUM", "date")
    );
}

#[test]
fn resumed_run_makes_no_score_calls() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = demo_config(dir.path());
    let first = run_pipeline(&config, None).unwrap();
    assert!(first.score_calls > 0);
    assert!(first.ran(Stage::Rerank));
    let report = std::fs::read(dir.path().join("report.json")).unwrap();

    config.resume = true;
    let second = run_pipeline(&config, None).unwrap();
    assert_eq!(second.score_calls, 0);
    assert!(!second.ran(Stage::Rerank));
    assert_eq!(
        std::fs::read(dir.path().join("report.json")).unwrap(),
        report
    );
}

#[test]
fn missing_corpus_is_a_config_error_with_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut config = demo_config(&out);
    config.paths.corpus = Some(dir.path().join("absent.jsonl"));
    let err = run_pipeline(&config, None).unwrap_err();
    assert_eq!(exit_code(err.kind()), 2);
    assert!(!out.exists());

    let status = Command::new(env!("CARGO_BIN_EXE_dynrank"))
        .args(["run", "--config"])
        .arg(demo_dir().join("config.json"))
        .arg("--corpus")
        .arg(dir.path().join("absent.jsonl"))
        .arg("--out-dir")
        .arg(&out)
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(&path, r#"{"rerank": {"depht": 10}}"#).unwrap();
    let output = Command::new(env!("CARGO_BIN_EXE_dynrank"))
        .args(["run", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&output.stderr).contains("depht"));
}

#[test]
fn evaluate_command_matches_independent_report() {
    let eval = fixture("eval");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let status = Command::new(env!("CARGO_BIN_EXE_dynrank"))
        .arg("evaluate")
        .arg("--run")
        .arg(eval.join("run.trec"))
        .arg("--corpus")
        .arg(eval.join("corpus.jsonl"))
        .arg("--queries")
        .arg(eval.join("queries.jsonl"))
        .arg("--qrels")
        .arg(eval.join("qrels.tsv"))
        .args(["--ks", "1,3,5", "--ndcg-k", "5", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());

    let got: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    let want: serde_json::Value =
        serde_json::from_slice(&std::fs::read(eval.join("expected_report.json")).unwrap()).unwrap();
    let (got, want) = (got.as_array().unwrap(), want.as_array().unwrap());
    assert_eq!(got.len(), want.len(), "got {got:?}");
    for (have, row) in got.iter().zip(want) {
        assert_eq!(have["metric"], row["metric"]);
        assert_eq!(have["k"], row["k"]);
        assert_eq!(have["n"], row["n"]);
        let (a, b) = (
            have["value"].as_f64().unwrap(),
            row["value"].as_f64().unwrap(),
        );
        assert!((a - b).abs() < 1e-9, "{}: {a} vs {b}", row["metric"]);
    }
    assert!(dir.path().join("report.txt").exists());
}
