//! Pipeline stages. Each stage reads file-based inputs and writes one
//! artifact, so it can run standalone or as part of [`run_pipeline`].

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use dynrank_core::bm25::{Analyzer, InvertedIndex};
use dynrank_core::classifier::{self, ClassifierModel};
use dynrank_core::corpus::{self, Passage, QueryFormat, Question, Run};
use dynrank_core::eval::{ndcg_at_k, topk_accuracy, Report};
use dynrank_core::prompt::TemplateRegistry;
use dynrank_core::rerank::{resolve_type, AuditRecord, Reranker};
use dynrank_core::scorer::{ScoreCache, ScoreError, ScoreRequest, ScoreResult, Scorer};
use dynrank_core::taxonomy::{QuestionType, Taxonomy};
use dynrank_core::{passage_lookup, Error, ErrorKind, Result};

use crate::config::PipelineConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Load,
    Index,
    Retrieve,
    ImportRun,
    TrainQc,
    Classify,
    Rerank,
    Evaluate,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Index => "index",
            Stage::Retrieve => "retrieve",
            Stage::ImportRun => "import-run",
            Stage::TrainQc => "train-qc",
            Stage::Classify => "classify",
            Stage::Rerank => "rerank",
            Stage::Evaluate => "evaluate",
        })
    }
}

/// A failure attributed to the stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl StageError {
    pub fn kind(&self) -> ErrorKind {
        self.error.kind()
    }
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Attaches a stage to a core result.
pub trait InStage<T> {
    fn in_stage(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> InStage<T> for Result<T> {
    fn in_stage(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

/// Process exit status for an error class.
pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Io => 3,
        ErrorKind::Protocol => 4,
        ErrorKind::Validation => 5,
        ErrorKind::Interrupted => 130,
    }
}

/// Artifact locations inside the output directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub index: PathBuf,
    pub first_stage_run: PathBuf,
    pub model: PathBuf,
    pub qtypes: PathBuf,
    pub reranked_run: PathBuf,
    pub audit: PathBuf,
    pub report_json: PathBuf,
    pub report_txt: PathBuf,
}

impl Artifacts {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            index: dir.join("index.json"),
            first_stage_run: dir.join("first_stage.run"),
            model: dir.join("qc_model.json"),
            qtypes: dir.join("qtypes.tsv"),
            reranked_run: dir.join("reranked.run"),
            audit: dir.join("audit.jsonl"),
            report_json: dir.join("report.json"),
            report_txt: dir.join("report.txt"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    Skipped,
}

#[derive(Debug, Default)]
pub struct Summary {
    pub stages: Vec<(Stage, StageStatus)>,
    /// Requests that reached the scorer backend (cache hits excluded).
    pub score_calls: usize,
    /// Candidates whose scoring failed and were sunk.
    pub score_failures: usize,
}

impl Summary {
    fn record(&mut self, stage: Stage, status: StageStatus) {
        self.stages.push((stage, status));
    }

    pub fn ran(&self, stage: Stage) -> bool {
        self.stages.contains(&(stage, StageStatus::Ran))
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (stage, status) in &self.stages {
            let status = match status {
                StageStatus::Ran => "ran",
                StageStatus::Skipped => "skipped (artifact exists)",
            };
            writeln!(f, "{stage:<10} {status}")?;
        }
        write!(
            f,
            "score calls: {}, failed candidates: {}",
            self.score_calls, self.score_failures
        )
    }
}

/// Scorer wrapper counting backend calls.
pub struct CountingScorer<'a> {
    inner: &'a dyn Scorer,
    calls: AtomicUsize,
}

impl<'a> CountingScorer<'a> {
    pub fn new(inner: &'a dyn Scorer) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Scorer for CountingScorer<'_> {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn score(&self, request: &ScoreRequest) -> std::result::Result<ScoreResult, ScoreError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.score(request)
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Writes via a sibling temporary file so a crash never leaves a partial artifact.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn with_tmp(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let tmp = tmp_path(path);
    write(&tmp)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_taxonomy(config: &PipelineConfig) -> Result<Taxonomy> {
    match &config.paths.taxonomy {
        Some(path) => Taxonomy::load(path),
        None => Ok(Taxonomy::default_table()),
    }
}

pub fn load_registry(config: &PipelineConfig, taxonomy: Taxonomy) -> Result<TemplateRegistry> {
    match &config.paths.templates {
        Some(path) => TemplateRegistry::load(path, taxonomy),
        None => Ok(TemplateRegistry::shipped(taxonomy)),
    }
}

pub fn load_corpus(config: &PipelineConfig) -> Result<Vec<Passage>> {
    corpus::load_corpus(config.require("paths.corpus", &config.paths.corpus)?)
}

pub fn load_questions(config: &PipelineConfig, taxonomy: &Taxonomy) -> Result<Vec<Question>> {
    let path = config.require("paths.queries", &config.paths.queries)?;
    corpus::load_queries(path, QueryFormat::from_path(path), taxonomy)
}

pub fn build_index(corpus: &[Passage], out: &Path) -> Result<InvertedIndex> {
    let index = InvertedIndex::build(corpus, Analyzer)?;
    with_tmp(out, |tmp| index.save(tmp))?;
    Ok(index)
}

pub fn retrieve(
    config: &PipelineConfig,
    index: &InvertedIndex,
    questions: &[Question],
    out: &Path,
) -> Result<Run> {
    let params = config.bm25_params();
    let mut run = Run::new();
    for q in questions {
        let entries = index.retrieve(&params, &q.id, &q.text, config.retrieval.depth)?;
        run.insert(q.id.clone(), entries);
    }
    write_atomic(out, corpus::format_run(&run, "")?.as_bytes())?;
    Ok(run)
}

/// Validates an external run and copies it, normalized, to `out`.
pub fn import_run(input: &Path, out: &Path) -> Result<Run> {
    let run = corpus::read_run(input)?;
    corpus::validate_run(&run)?;
    write_atomic(out, corpus::format_run(&run, "")?.as_bytes())?;
    Ok(run)
}

/// Labeled questions: UIUC `.label` files or the query formats with a `type` field.
pub fn load_labeled(path: &Path, taxonomy: &Taxonomy) -> Result<Vec<Question>> {
    let questions = if path.extension().is_some_and(|e| e == "label") {
        classifier::load_uiuc_labeled(path)?
    } else {
        corpus::load_queries(path, QueryFormat::from_path(path), taxonomy)?
    };
    if let Some(q) = questions.iter().find(|q| q.gold_type.is_none()) {
        return Err(Error::validation(format!(
            "{}: question {} has no type label",
            path.display(),
            q.id
        )));
    }
    Ok(questions)
}

pub fn train_classifier(
    config: &PipelineConfig,
    taxonomy: &Taxonomy,
    out: &Path,
) -> Result<ClassifierModel> {
    let path = config.require("paths.qc_train", &config.paths.qc_train)?;
    let labeled = load_labeled(path, taxonomy)?;
    let model = classifier::train(&labeled, taxonomy, &config.training_config())?;
    model.save(out)?;
    Ok(model)
}

/// Where a question's type came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TypeSource {
    Gold,
    Classifier,
    None,
}

impl TypeSource {
    fn as_str(self) -> &'static str {
        match self {
            TypeSource::Gold => "gold",
            TypeSource::Classifier => "classifier",
            TypeSource::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeAssignment {
    pub qid: String,
    pub qtype: Option<QuestionType>,
    pub source: TypeSource,
}

/// Gold labels win; otherwise the classifier decides when one is given.
pub fn classify(questions: &[Question], model: Option<&ClassifierModel>) -> Vec<TypeAssignment> {
    questions
        .iter()
        .map(|q| {
            let source = match (&q.gold_type, model) {
                (Some(_), _) => TypeSource::Gold,
                (None, Some(_)) => TypeSource::Classifier,
                (None, None) => TypeSource::None,
            };
            TypeAssignment {
                qid: q.id.clone(),
                qtype: resolve_type(q, model),
                source,
            }
        })
        .collect()
}

pub fn format_qtypes(assignments: &[TypeAssignment]) -> String {
    assignments
        .iter()
        .map(|a| {
            let label = a
                .qtype
                .as_ref()
                .map_or("-".to_string(), ToString::to_string);
            format!("{}\t{label}\t{}\n", a.qid, a.source.as_str())
        })
        .collect()
}

pub fn read_qtypes(path: &Path, taxonomy: &Taxonomy) -> Result<Vec<TypeAssignment>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        if !(2..=3).contains(&cols.len()) {
            return Err(Error::parse(
                &name,
                i + 1,
                "expected qid<TAB>MAJ:min[<TAB>source]",
            ));
        }
        let qtype = match cols[1].trim() {
            "-" | "" => None,
            label => Some(
                taxonomy
                    .parse_label(label)
                    .map_err(|e| Error::parse(&name, i + 1, e.to_string()))?,
            ),
        };
        let source = match cols.get(2).map(|s| s.trim()) {
            Some("gold") => TypeSource::Gold,
            Some("none") => TypeSource::None,
            _ if qtype.is_none() => TypeSource::None,
            _ => TypeSource::Classifier,
        };
        out.push(TypeAssignment {
            qid: cols[0].to_string(),
            qtype,
            source,
        });
    }
    Ok(out)
}

/// Sets each question's type from `assignments`; questions not listed keep their own.
pub fn apply_types(questions: &mut [Question], assignments: &[TypeAssignment]) {
    let by_id: HashMap<&str, &TypeAssignment> =
        assignments.iter().map(|a| (a.qid.as_str(), a)).collect();
    for q in questions {
        if let Some(a) = by_id.get(q.id.as_str()) {
            q.gold_type = a.qtype.clone();
        }
    }
}

pub fn format_audit(records: &[AuditRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("audit record serializes") + "\n")
        .collect()
}

pub struct RerankArtifacts<'a> {
    pub run: &'a Path,
    pub audit: &'a Path,
}

/// Re-ranks `run` with the configured scorer; question types must already be
/// resolved onto `questions`. Returns the run and the number of backend calls.
#[allow(clippy::too_many_arguments)]
pub fn rerank(
    config: &PipelineConfig,
    registry: &TemplateRegistry,
    corpus: &[Passage],
    questions: &[Question],
    run: &Run,
    out: RerankArtifacts<'_>,
    cancel: Option<Arc<AtomicBool>>,
    summary: &mut Summary,
) -> Result<Run> {
    let backend = config.scorer_config().build()?;
    let scorer = CountingScorer::new(backend.as_ref());
    let cache = match &config.paths.cache {
        Some(path) => ScoreCache::open(path)?,
        None => ScoreCache::in_memory(),
    };
    let mut reranker = Reranker::new(registry, &scorer, config.rerank_config())?.with_cache(&cache);
    if let Some(flag) = cancel {
        reranker = reranker.with_cancel(flag);
    }
    let lookup = passage_lookup(corpus);
    let result = reranker.rerank_run(questions, run, &lookup, None);
    summary.score_calls += scorer.calls();
    if let Err(err) = cache.flush() {
        log::warn!("score cache flush failed: {err}");
    }
    let output = result?;
    summary.score_failures += output.failures;
    if output.failures > 0 {
        log::warn!(
            "{} candidate(s) could not be scored and were ranked last",
            output.failures
        );
    }
    write_atomic(out.audit, format_audit(&output.audit).as_bytes())?;
    write_atomic(out.run, corpus::format_run(&output.run, "")?.as_bytes())?;
    Ok(output.run)
}

/// Label for a run in reports: the tag of its first entry.
pub fn run_label(run: &Run, fallback: &str) -> String {
    run.values()
        .flat_map(|entries| entries.first())
        .map(|e| e.tag.clone())
        .find(|t| !t.is_empty())
        .unwrap_or_else(|| fallback.to_string())
}

/// Accuracy rows when any question carries answers, nDCG rows when qrels are configured.
pub fn evaluate(
    config: &PipelineConfig,
    runs: &[(String, Run)],
    questions: Option<&[Question]>,
    corpus: Option<&[Passage]>,
) -> Result<Report> {
    let qrels = match &config.paths.qrels {
        Some(path) => Some(corpus::read_qrels(path)?),
        None => None,
    };
    let answered = questions.filter(|qs| qs.iter().any(|q| !q.answers.is_empty()));
    if answered.is_none() && qrels.is_none() {
        return Err(Error::Config(
            "nothing to evaluate: give queries with answers (and a corpus) or qrels".into(),
        ));
    }
    let lookup = corpus.map(passage_lookup);
    let mut report = Report::default();
    for (label, run) in runs {
        let prefix = format!("{label}/");
        if let Some(questions) = answered {
            let lookup = lookup
                .as_ref()
                .ok_or_else(|| Error::Config("answer accuracy needs paths.corpus".into()))?;
            let acc = topk_accuracy(run, questions, lookup, &config.eval.ks)?;
            report.add_accuracy(&prefix, &acc);
        }
        if let Some(qrels) = &qrels {
            report.add_ndcg(&prefix, &ndcg_at_k(run, qrels, config.eval.ndcg_k)?);
        }
    }
    Ok(report)
}

pub fn write_report(report: &Report, json: &Path, txt: &Path) -> Result<()> {
    write_atomic(json, report.to_json().as_bytes())?;
    write_atomic(txt, report.to_table().as_bytes())
}

fn skip(config: &PipelineConfig, outputs: &[&Path]) -> bool {
    config.resume && outputs.iter().all(|p| p.exists())
}

/// Runs every stage: first-stage retrieval (or run import), classification,
/// reranking and evaluation, writing each artifact under `paths.out_dir`.
///
/// With `resume` set, a stage whose artifacts all exist is skipped and its
/// artifact is read back instead. Nothing is written before the config and
/// its inputs have been validated.
pub fn run_pipeline(
    config: &PipelineConfig,
    cancel: Option<Arc<AtomicBool>>,
) -> std::result::Result<Summary, StageError> {
    config.validate().in_stage(Stage::Config)?;
    config
        .require("paths.corpus", &config.paths.corpus)
        .and(config.require("paths.queries", &config.paths.queries))
        .in_stage(Stage::Config)?;

    let taxonomy = load_taxonomy(config).in_stage(Stage::Load)?;
    let registry = load_registry(config, taxonomy.clone()).in_stage(Stage::Load)?;
    let passages = load_corpus(config).in_stage(Stage::Load)?;
    let mut questions = load_questions(config, &taxonomy).in_stage(Stage::Load)?;
    let preset_types = match &config.paths.qtypes {
        Some(path) => Some(read_qtypes(path, &taxonomy).in_stage(Stage::Load)?),
        None => None,
    };
    let model = match &config.paths.model {
        Some(path) => Some(ClassifierModel::load(path).in_stage(Stage::Load)?),
        None => None,
    };

    let out_dir = &config.paths.out_dir;
    fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir, e))
        .in_stage(Stage::Load)?;
    let art = Artifacts::in_dir(out_dir);
    let mut summary = Summary::default();

    // first stage
    let first_stage = if let Some(input) = &config.paths.run_in {
        if skip(config, &[&art.first_stage_run]) {
            summary.record(Stage::ImportRun, StageStatus::Skipped);
            corpus::read_run(&art.first_stage_run).in_stage(Stage::ImportRun)?
        } else {
            let run = import_run(input, &art.first_stage_run).in_stage(Stage::ImportRun)?;
            summary.record(Stage::ImportRun, StageStatus::Ran);
            run
        }
    } else if skip(config, &[&art.first_stage_run]) {
        summary.record(Stage::Index, StageStatus::Skipped);
        summary.record(Stage::Retrieve, StageStatus::Skipped);
        corpus::read_run(&art.first_stage_run).in_stage(Stage::Retrieve)?
    } else {
        let index = if let Some(path) = &config.paths.index {
            summary.record(Stage::Index, StageStatus::Skipped);
            InvertedIndex::load(path).in_stage(Stage::Index)?
        } else if skip(config, &[&art.index]) {
            summary.record(Stage::Index, StageStatus::Skipped);
            InvertedIndex::load(&art.index).in_stage(Stage::Index)?
        } else {
            let index = build_index(&passages, &art.index).in_stage(Stage::Index)?;
            summary.record(Stage::Index, StageStatus::Ran);
            index
        };
        let run =
            retrieve(config, &index, &questions, &art.first_stage_run).in_stage(Stage::Retrieve)?;
        summary.record(Stage::Retrieve, StageStatus::Ran);
        run
    };

    // question types
    let assignments = if let Some(preset) = preset_types {
        summary.record(Stage::Classify, StageStatus::Skipped);
        preset
    } else if skip(config, &[&art.qtypes]) {
        summary.record(Stage::Classify, StageStatus::Skipped);
        read_qtypes(&art.qtypes, &taxonomy).in_stage(Stage::Classify)?
    } else {
        let model = match model {
            Some(model) => Some(model),
            None if config.paths.qc_train.is_some() => {
                if skip(config, &[&art.model]) {
                    summary.record(Stage::TrainQc, StageStatus::Skipped);
                    Some(ClassifierModel::load(&art.model).in_stage(Stage::TrainQc)?)
                } else {
                    let m =
                        train_classifier(config, &taxonomy, &art.model).in_stage(Stage::TrainQc)?;
                    summary.record(Stage::TrainQc, StageStatus::Ran);
                    Some(m)
                }
            }
            None => None,
        };
        let assignments = classify(&questions, model.as_ref());
        write_atomic(&art.qtypes, format_qtypes(&assignments).as_bytes())
            .in_stage(Stage::Classify)?;
        summary.record(Stage::Classify, StageStatus::Ran);
        assignments
    };
    apply_types(&mut questions, &assignments);

    // rerank
    let reranked = if skip(config, &[&art.reranked_run, &art.audit]) {
        summary.record(Stage::Rerank, StageStatus::Skipped);
        corpus::read_run(&art.reranked_run).in_stage(Stage::Rerank)?
    } else {
        let out = RerankArtifacts {
            run: &art.reranked_run,
            audit: &art.audit,
        };
        let run = rerank(
            config,
            &registry,
            &passages,
            &questions,
            &first_stage,
            out,
            cancel,
            &mut summary,
        )
        .in_stage(Stage::Rerank)?;
        summary.record(Stage::Rerank, StageStatus::Ran);
        run
    };

    // evaluate
    if skip(config, &[&art.report_json, &art.report_txt]) {
        summary.record(Stage::Evaluate, StageStatus::Skipped);
    } else {
        let first_label = if config.paths.run_in.is_some() {
            "input"
        } else {
            "bm25"
        };
        let runs = [
            (run_label(&first_stage, first_label), first_stage),
            (config.rerank_config().tag().to_string(), reranked),
        ];
        let report =
            evaluate(config, &runs, Some(&questions), Some(&passages)).in_stage(Stage::Evaluate)?;
        write_report(&report, &art.report_json, &art.report_txt).in_stage(Stage::Evaluate)?;
        summary.record(Stage::Evaluate, StageStatus::Ran);
    }
    Ok(summary)
}
