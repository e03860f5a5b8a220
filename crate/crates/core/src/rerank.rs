//! Re-ranking of retrieved candidates by question likelihood.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use serde::Serialize;

use crate::classifier::ClassifierModel;
use crate::corpus::{Passage, Question, Run, RunEntry};
use crate::error::{Error, Result};
use crate::prompt::{PromptMode, TemplateKey, TemplateRegistry};
use crate::scorer::{
    score_batch, BatchOptions, ScoreCache, ScoreError, ScoreRequest, Scorer,
    DEFAULT_QUESTION_TOKEN_CAP,
};
use crate::taxonomy::QuestionType;

pub const DYNAMIC_TAG: &str = "dynrank";
pub const STATIC_TAG: &str = "static-qg";

#[derive(Debug, Clone, PartialEq)]
pub struct RerankConfig {
    /// Candidates per query that are re-scored (deeper entries are dropped).
    pub depth: usize,
    pub mode: PromptMode,
    pub max_passage_tokens: usize,
    pub question_token_cap: usize,
    pub parallelism: usize,
    /// Abort on the first scoring failure instead of sinking the candidate.
    pub strict: bool,
}

impl Default for RerankConfig {
    fn default() -> Self {
        Self {
            depth: 1000,
            mode: PromptMode::Dynamic,
            max_passage_tokens: 512,
            question_token_cap: DEFAULT_QUESTION_TOKEN_CAP,
            parallelism: 16,
            strict: false,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("rerank depth must be >= 1".into()));
        }
        if self.max_passage_tokens == 0 || self.question_token_cap == 0 {
            return Err(Error::Config("token budgets must be >= 1".into()));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be >= 1".into()));
        }
        Ok(())
    }

    pub fn tag(&self) -> &'static str {
        match self.mode {
            PromptMode::Dynamic => DYNAMIC_TAG,
            PromptMode::Static => STATIC_TAG,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub passage: &'a Passage,
    pub original_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredCandidate {
    pub passage_id: String,
    pub original_rank: usize,
    /// Query likelihood; `-inf` when scoring failed.
    pub score: f64,
    pub prompt_key: TemplateKey,
    pub rank: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub type RankedList = Vec<ScoredCandidate>;

/// Per-query audit line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRecord {
    pub qid: String,
    pub qtype: Option<String>,
    pub prompt_key: String,
    pub candidates: Vec<AuditCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditCandidate {
    pub pid: String,
    pub orig_rank: usize,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankOutput {
    pub run: Run,
    pub audit: Vec<AuditRecord>,
    pub failures: usize,
}

pub struct Reranker<'a> {
    registry: &'a TemplateRegistry,
    scorer: &'a dyn Scorer,
    cache: Option<&'a ScoreCache>,
    config: RerankConfig,
    cancel: Option<Arc<AtomicBool>>,
}

impl<'a> Reranker<'a> {
    pub fn new(
        registry: &'a TemplateRegistry,
        scorer: &'a dyn Scorer,
        config: RerankConfig,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            registry,
            scorer,
            cache: None,
            config,
            cancel: None,
        })
    }

    pub fn with_cache(mut self, cache: &'a ScoreCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_cancel(mut self, flag: Arc<AtomicBool>) -> Self {
        self.cancel = Some(flag);
        self
    }

    pub fn config(&self) -> &RerankConfig {
        &self.config
    }

    /// Re-scores one question's candidates and sorts them by descending score,
    /// ties broken by original rank.
    pub fn rerank_question(
        &self,
        question: &Question,
        candidates: &[Candidate<'_>],
        qtype: Option<&QuestionType>,
    ) -> Result<RankedList> {
        if candidates.is_empty() {
            return Err(Error::validation(format!(
                "query {}: no candidates to rerank",
                question.id
            )));
        }
        let mut ranks: Vec<usize> = candidates.iter().map(|c| c.original_rank).collect();
        ranks.sort_unstable();
        if ranks.iter().enumerate().any(|(i, &r)| r != i + 1) {
            return Err(Error::validation(format!(
                "query {}: candidate ranks are not 1..{}",
                question.id,
                candidates.len()
            )));
        }

        let qtype = match self.config.mode {
            PromptMode::Dynamic => qtype,
            PromptMode::Static => None,
        };
        let prompts: Vec<_> = candidates
            .iter()
            .map(|c| {
                self.registry
                    .render(qtype, c.passage, self.config.max_passage_tokens)
            })
            .collect();
        let requests: Vec<ScoreRequest> = prompts
            .iter()
            .map(|p| {
                ScoreRequest::new(p.text.clone(), question.text.clone())
                    .with_cap(self.config.question_token_cap)
            })
            .collect();
        let options = BatchOptions {
            parallelism: self.config.parallelism,
            cancel: self.cancel.clone(),
        };
        let results = score_batch(self.scorer, &requests, self.cache, &options);

        let mut scored = Vec::with_capacity(candidates.len());
        for ((candidate, prompt), result) in candidates.iter().zip(prompts).zip(results) {
            let (score, error) = match result {
                Ok(r) => (r.avg_logprob, None),
                Err(ScoreError::Interrupted) => return Err(ScoreError::Interrupted.into()),
                Err(err) if self.config.strict => return Err(err.into()),
                Err(err) => {
                    log::warn!(
                        "query {} passage {}: scoring failed, sinking candidate: {err}",
                        question.id,
                        candidate.passage.id
                    );
                    (f64::NEG_INFINITY, Some(err.to_string()))
                }
            };
            scored.push(ScoredCandidate {
                passage_id: candidate.passage.id.clone(),
                original_rank: candidate.original_rank,
                score,
                prompt_key: prompt.source_key,
                rank: 0,
                error,
            });
        }
        sort_scored(&mut scored);
        Ok(scored)
    }

    /// Re-ranks every query of `run`. All query and passage ids are checked
    /// before any scoring happens.
    ///
    /// A question's type comes from its `gold_type` when present, otherwise
    /// from `classifier`; with neither the default template is used.
    pub fn rerank_run(
        &self,
        questions: &[Question],
        run: &Run,
        corpus: &HashMap<&str, &Passage>,
        classifier: Option<&ClassifierModel>,
    ) -> Result<RerankOutput> {
        let by_id: HashMap<&str, &Question> =
            questions.iter().map(|q| (q.id.as_str(), q)).collect();

        let mut work = Vec::with_capacity(run.len());
        for (qid, entries) in run {
            let question = by_id.get(qid.as_str()).ok_or_else(|| {
                Error::validation(format!("run query {qid} has no question text"))
            })?;
            let mut entries: Vec<&RunEntry> = entries.iter().collect();
            entries.sort_by_key(|e| e.rank);
            entries.truncate(self.config.depth);
            let candidates = entries
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    corpus
                        .get(e.passage_id.as_str())
                        .map(|&passage| Candidate {
                            passage,
                            original_rank: i + 1,
                        })
                        .ok_or_else(|| {
                            Error::validation(format!(
                                "query {qid}: passage {} is not in the corpus",
                                e.passage_id
                            ))
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            work.push((qid, *question, candidates));
        }

        let tag = self.config.tag();
        let mut output = RerankOutput {
            run: Run::new(),
            audit: Vec::with_capacity(work.len()),
            failures: 0,
        };
        for (qid, question, candidates) in work {
            if candidates.is_empty() {
                output.run.insert(qid.clone(), Vec::new());
                continue;
            }
            let qtype = resolve_type(question, classifier);
            let ranked = self.rerank_question(question, &candidates, qtype.as_ref())?;
            output.failures += ranked.iter().filter(|c| c.error.is_some()).count();
            output.audit.push(AuditRecord {
                qid: qid.clone(),
                qtype: qtype.as_ref().map(ToString::to_string),
                prompt_key: ranked[0].prompt_key.to_string(),
                candidates: ranked
                    .iter()
                    .map(|c| AuditCandidate {
                        pid: c.passage_id.clone(),
                        orig_rank: c.original_rank,
                        score: c.score.is_finite().then_some(c.score),
                    })
                    .collect(),
            });
            let entries = ranked
                .into_iter()
                .map(|c| RunEntry {
                    query_id: qid.clone(),
                    passage_id: c.passage_id,
                    rank: c.rank,
                    score: c.score,
                    tag: tag.to_string(),
                })
                .collect();
            output.run.insert(qid.clone(), entries);
        }
        Ok(output)
    }
}

pub fn resolve_type(
    question: &Question,
    classifier: Option<&ClassifierModel>,
) -> Option<QuestionType> {
    question
        .gold_type
        .clone()
        .or_else(|| classifier.map(|m| m.classify(&question.text)))
}

/// Descending score, then ascending original rank; assigns ranks 1..n.
pub fn sort_scored(scored: &mut [ScoredCandidate]) {
    scored.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.original_rank.cmp(&b.original_rank))
    });
    for (i, c) in scored.iter_mut().enumerate() {
        c.rank = i + 1;
    }
}

pub fn write_audit(records: &[AuditRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).expect("audit record serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
