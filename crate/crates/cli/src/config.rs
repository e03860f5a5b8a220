//! Pipeline configuration: a JSON file whose keys can each be overridden by a
//! command-line flag.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Args;
use dynrank_core::bm25::Bm25Params;
use dynrank_core::classifier::TrainingConfig;
use dynrank_core::prompt::PromptMode;
use dynrank_core::rerank::RerankConfig;
use dynrank_core::scorer::{Backend, ScorerConfig};
use dynrank_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Fallback for `scorer.endpoint` when neither the file nor a flag sets it.
pub const ENDPOINT_ENV: &str = "DYNRANK_SCORER_ENDPOINT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    /// External first-stage run; replaces BM25 indexing and retrieval.
    pub run_in: Option<PathBuf>,
    /// Prebuilt BM25 index.
    pub index: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    /// Trained question classifier.
    pub model: Option<PathBuf>,
    /// Labeled questions for training the classifier.
    pub qc_train: Option<PathBuf>,
    /// Precomputed question types (`qid<TAB>MAJ:min<TAB>source`).
    pub qtypes: Option<PathBuf>,
    /// Append-only score cache.
    pub cache: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            queries: None,
            run_in: None,
            index: None,
            qrels: None,
            taxonomy: None,
            templates: None,
            model: None,
            qc_train: None,
            qtypes: None,
            cache: None,
            out_dir: PathBuf::from("dynrank-out"),
        }
    }
}

impl PathsConfig {
    /// Read-side paths paired with their config key.
    fn inputs(&self) -> [(&'static str, Option<&PathBuf>); 10] {
        [
            ("paths.corpus", self.corpus.as_ref()),
            ("paths.queries", self.queries.as_ref()),
            ("paths.run_in", self.run_in.as_ref()),
            ("paths.index", self.index.as_ref()),
            ("paths.qrels", self.qrels.as_ref()),
            ("paths.taxonomy", self.taxonomy.as_ref()),
            ("paths.templates", self.templates.as_ref()),
            ("paths.model", self.model.as_ref()),
            ("paths.qc_train", self.qc_train.as_ref()),
            ("paths.qtypes", self.qtypes.as_ref()),
        ]
    }

    fn resolve_against(&mut self, base: &Path) {
        let fields = [
            &mut self.corpus,
            &mut self.queries,
            &mut self.run_in,
            &mut self.index,
            &mut self.qrels,
            &mut self.taxonomy,
            &mut self.templates,
            &mut self.model,
            &mut self.qc_train,
            &mut self.qtypes,
            &mut self.cache,
        ];
        for path in fields.into_iter().flatten() {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        if self.out_dir.is_relative() {
            self.out_dir = base.join(&self.out_dir);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k1: f64,
    pub b: f64,
    /// Passages retrieved per query, and the rerank depth.
    pub depth: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        let params = Bm25Params::default();
        Self {
            k1: params.k1,
            b: params.b,
            depth: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        let t = TrainingConfig::default();
        Self {
            epochs: t.epochs,
            lr: t.learning_rate,
            batch_size: t.batch_size,
            seed: t.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RerankSection {
    pub mode: PromptMode,
    /// Passage budget in whitespace tokens.
    pub truncation: usize,
    /// Question tokens averaged per score.
    pub question_cap: usize,
    pub strict: bool,
}

impl Default for RerankSection {
    fn default() -> Self {
        let r = RerankConfig::default();
        Self {
            mode: r.mode,
            truncation: r.max_passage_tokens,
            question_cap: r.question_token_cap,
            strict: r.strict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerSection {
    pub backend: Backend,
    pub endpoint: Option<String>,
    pub model_name: Option<String>,
    pub parallelism: usize,
    /// Per-request timeout in seconds.
    pub timeout: f64,
    pub retries: u32,
}

impl Default for ScorerSection {
    fn default() -> Self {
        let s = ScorerConfig::default();
        Self {
            backend: s.backend,
            endpoint: s.endpoint,
            model_name: s.model_name,
            parallelism: s.parallelism,
            timeout: s.timeout.as_secs_f64(),
            retries: s.max_retries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub ndcg_k: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![1, 20, 100],
            ndcg_k: 10,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub retrieval: RetrievalConfig,
    pub classifier: ClassifierConfig,
    pub rerank: RerankSection,
    pub scorer: ScorerSection,
    pub eval: EvalConfig,
    /// Skip stages whose output artifacts already exist.
    pub resume: bool,
}

fn parse_mode(s: &str) -> std::result::Result<PromptMode, String> {
    match s {
        "dynamic" => Ok(PromptMode::Dynamic),
        "static" => Ok(PromptMode::Static),
        other => Err(format!("expected `dynamic` or `static`, got `{other}`")),
    }
}

fn parse_backend(s: &str) -> std::result::Result<Backend, String> {
    match s {
        "mock" => Ok(Backend::Mock),
        "remote" => Ok(Backend::Remote),
        other => Err(format!("expected `mock` or `remote`, got `{other}`")),
    }
}

/// Command-line overrides; each flag mirrors one config key.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON config file; relative paths inside it resolve against its directory.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, value_name = "FILE", help_heading = "Paths")]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE", help_heading = "Paths")]
    pub queries: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE", help_heading = "Paths")]
    pub run_in: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE", help_heading = "Paths")]
    pub index: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE", help_heading = "Paths")]
    pub qrels: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE", help_heading = "Paths")]
    pub taxonomy: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE", help_heading = "Paths")]
    pub templates: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE", help_heading = "Paths")]
    pub model: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE", help_heading = "Paths")]
    pub qc_train: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE", help_heading = "Paths")]
    pub qtypes: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE", help_heading = "Paths")]
    pub cache: Option<PathBuf>,
    #[arg(long, global = true, value_name = "DIR", help_heading = "Paths")]
    pub out_dir: Option<PathBuf>,

    #[arg(long, global = true, help_heading = "Retrieval")]
    pub k1: Option<f64>,
    #[arg(long, global = true, help_heading = "Retrieval")]
    pub b: Option<f64>,
    #[arg(long, global = true, help_heading = "Retrieval")]
    pub depth: Option<usize>,

    #[arg(long, global = true, help_heading = "Classifier")]
    pub epochs: Option<usize>,
    #[arg(long, global = true, help_heading = "Classifier")]
    pub lr: Option<f64>,
    #[arg(long, global = true, help_heading = "Classifier")]
    pub batch_size: Option<usize>,
    #[arg(long, global = true, help_heading = "Classifier")]
    pub seed: Option<u64>,

    /// `dynamic` or `static`.
    #[arg(long, global = true, value_parser = parse_mode, help_heading = "Rerank")]
    pub mode: Option<PromptMode>,
    #[arg(long, global = true, help_heading = "Rerank")]
    pub truncation: Option<usize>,
    #[arg(long, global = true, help_heading = "Rerank")]
    pub question_cap: Option<usize>,
    /// Abort on the first scoring failure.
    #[arg(long, global = true, help_heading = "Rerank")]
    pub strict: bool,

    /// `mock` or `remote`.
    #[arg(long, global = true, value_parser = parse_backend, help_heading = "Scorer")]
    pub backend: Option<Backend>,
    #[arg(long, global = true, help_heading = "Scorer")]
    pub endpoint: Option<String>,
    #[arg(long, global = true, help_heading = "Scorer")]
    pub model_name: Option<String>,
    #[arg(long, global = true, help_heading = "Scorer")]
    pub parallelism: Option<usize>,
    /// Seconds.
    #[arg(long, global = true, help_heading = "Scorer")]
    pub timeout: Option<f64>,
    #[arg(long, global = true, help_heading = "Scorer")]
    pub retries: Option<u32>,

    /// Comma-separated cutoffs for top-k accuracy.
    #[arg(
        long,
        global = true,
        value_delimiter = ',',
        help_heading = "Evaluation"
    )]
    pub ks: Option<Vec<usize>>,
    #[arg(long, global = true, help_heading = "Evaluation")]
    pub ndcg_k: Option<usize>,

    /// Skip stages whose output artifacts already exist.
    #[arg(long, global = true)]
    pub resume: bool,
}

macro_rules! set {
    ($target:expr, $value:expr) => {
        if let Some(v) = $value {
            $target = v;
        }
    };
    (opt $target:expr, $value:expr) => {
        if let Some(v) = $value {
            $target = Some(v);
        }
    };
}

impl PipelineConfig {
    /// Reads a config file, resolving its relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.paths.resolve_against(base);
        Ok(config)
    }

    /// File (if any) + flag overrides + environment fallback, validated.
    pub fn resolve(overrides: &Overrides) -> Result<Self> {
        let mut config = match &overrides.config {
            Some(path) => Self::load(path)?,
            None => Self::default(),
        };
        config.apply(overrides);
        config.apply_env(std::env::var(ENDPOINT_ENV).ok());
        config.validate()?;
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        let p = &mut self.paths;
        set!(opt p.corpus, o.corpus.clone());
        set!(opt p.queries, o.queries.clone());
        set!(opt p.run_in, o.run_in.clone());
        set!(opt p.index, o.index.clone());
        set!(opt p.qrels, o.qrels.clone());
        set!(opt p.taxonomy, o.taxonomy.clone());
        set!(opt p.templates, o.templates.clone());
        set!(opt p.model, o.model.clone());
        set!(opt p.qc_train, o.qc_train.clone());
        set!(opt p.qtypes, o.qtypes.clone());
        set!(opt p.cache, o.cache.clone());
        set!(p.out_dir, o.out_dir.clone());

        set!(self.retrieval.k1, o.k1);
        set!(self.retrieval.b, o.b);
        set!(self.retrieval.depth, o.depth);

        set!(self.classifier.epochs, o.epochs);
        set!(self.classifier.lr, o.lr);
        set!(self.classifier.batch_size, o.batch_size);
        set!(self.classifier.seed, o.seed);

        set!(self.rerank.mode, o.mode);
        set!(self.rerank.truncation, o.truncation);
        set!(self.rerank.question_cap, o.question_cap);
        self.rerank.strict |= o.strict;

        set!(self.scorer.backend, o.backend);
        set!(opt self.scorer.endpoint, o.endpoint.clone());
        set!(opt self.scorer.model_name, o.model_name.clone());
        set!(self.scorer.parallelism, o.parallelism);
        set!(self.scorer.timeout, o.timeout);
        set!(self.scorer.retries, o.retries);

        set!(self.eval.ks, o.ks.clone());
        set!(self.eval.ndcg_k, o.ndcg_k);

        self.resume |= o.resume;
    }

    pub fn apply_env(&mut self, endpoint: Option<String>) {
        if self.scorer.endpoint.is_none() {
            self.scorer.endpoint = endpoint.filter(|e| !e.is_empty());
        }
    }

    /// Checks numeric ranges and that every configured input path exists.
    pub fn validate(&self) -> Result<()> {
        self.bm25_params().validate()?;
        if self.retrieval.depth == 0 {
            return Err(Error::Config("retrieval.depth must be >= 1".into()));
        }
        let c = &self.classifier;
        if c.epochs == 0 || c.batch_size == 0 {
            return Err(Error::Config(
                "classifier.epochs and classifier.batch_size must be >= 1".into(),
            ));
        }
        if !(c.lr > 0.0 && c.lr.is_finite()) {
            return Err(Error::Config(format!(
                "classifier.lr must be > 0, got {}",
                c.lr
            )));
        }
        self.rerank_config().validate()?;
        if !(self.scorer.timeout > 0.0 && self.scorer.timeout.is_finite()) {
            return Err(Error::Config(format!(
                "scorer.timeout must be > 0 seconds, got {}",
                self.scorer.timeout
            )));
        }
        self.scorer_config().validate()?;
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(Error::Config(
                "eval.ks must be a non-empty list of positive cutoffs".into(),
            ));
        }
        if self.eval.ndcg_k == 0 {
            return Err(Error::Config("eval.ndcg_k must be >= 1".into()));
        }
        for (key, path) in self.paths.inputs() {
            if let Some(path) = path {
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "{key}: {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// The path stored under `key`, or a config error naming the missing key.
    pub fn require<'a>(&self, key: &str, path: &'a Option<PathBuf>) -> Result<&'a Path> {
        path.as_deref()
            .ok_or_else(|| Error::Config(format!("{key} is required for this command")))
    }

    pub fn bm25_params(&self) -> Bm25Params {
        Bm25Params {
            k1: self.retrieval.k1,
            b: self.retrieval.b,
        }
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            epochs: self.classifier.epochs,
            learning_rate: self.classifier.lr,
            batch_size: self.classifier.batch_size,
            seed: self.classifier.seed,
        }
    }

    pub fn rerank_config(&self) -> RerankConfig {
        RerankConfig {
            depth: self.retrieval.depth,
            mode: self.rerank.mode,
            max_passage_tokens: self.rerank.truncation,
            question_token_cap: self.rerank.question_cap,
            parallelism: self.scorer.parallelism,
            strict: self.rerank.strict,
        }
    }

    pub fn scorer_config(&self) -> ScorerConfig {
        ScorerConfig {
            backend: self.scorer.backend,
            endpoint: self.scorer.endpoint.clone(),
            model_name: self.scorer.model_name.clone(),
            timeout: Duration::try_from_secs_f64(self.scorer.timeout).unwrap_or(Duration::MAX),
            max_retries: self.scorer.retries,
            parallelism: self.scorer.parallelism,
        }
    }
}
