use std::collections::{HashMap, HashSet};

use super::{BackendMeta, ScoreError, ScoreRequest, ScoreResult, Scorer};

/// Deterministic add-one smoothed unigram scorer over the context.
///
/// `P(w) = (count(w in context) + 1) / (len(context) + |V|)` where `V` is the
/// union of context and question vocabularies; tokens are lowercased
/// whitespace splits.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockScorer;

impl Scorer for MockScorer {
    fn model_name(&self) -> &str {
        "mock"
    }

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResult, ScoreError> {
        score_mock(request)
    }
}

fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

pub fn score_mock(request: &ScoreRequest) -> Result<ScoreResult, ScoreError> {
    request.validate()?;
    let context = tokens(&request.context);
    let mut question = tokens(&request.question);
    question.truncate(request.question_token_cap);

    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &context {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let vocabulary: HashSet<&str> = context
        .iter()
        .chain(question.iter())
        .map(String::as_str)
        .collect();
    let denominator = (context.len() + vocabulary.len()) as f64;

    let total: f64 = question
        .iter()
        .map(|t| {
            let count = counts.get(t.as_str()).copied().unwrap_or(0) as f64;
            ((count + 1.0) / denominator).ln()
        })
        .sum();

    Ok(ScoreResult {
        avg_logprob: total / question.len() as f64,
        token_count: question.len(),
        backend_meta: BackendMeta {
            backend: "mock".into(),
            ..Default::default()
        },
    })
}
