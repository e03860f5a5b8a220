//! Top-k answer accuracy and nDCG@k.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::Serialize;

use crate::corpus::{Passage, Qrels, Question, Run};
use crate::error::{Error, Result};

/// Lowercase, drop punctuation, drop the articles a/an/the, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .filter(|c| !(c.is_ascii_punctuation() || is_unicode_punctuation(*c)))
        .collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn is_unicode_punctuation(c: char) -> bool {
    matches!(
        c,
        '\u{2010}'..='\u{2027}' | '\u{2030}'..='\u{205E}' | '\u{00A1}' | '\u{00AB}' | '\u{00B7}'
            | '\u{00BB}' | '\u{00BF}' | '\u{3001}'..='\u{3003}' | '\u{300C}'..='\u{300F}'
    )
}

/// True when some non-empty normalized answer occurs in the normalized passage.
pub fn answer_match(passage_text: &str, answers: &[String]) -> bool {
    if answers.is_empty() {
        return false;
    }
    let passage = normalize_answer(passage_text);
    answers
        .iter()
        .map(|a| normalize_answer(a))
        .any(|a| !a.is_empty() && passage.contains(&a))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub per_k: BTreeMap<usize, f64>,
    pub avg: f64,
    pub n_questions: usize,
}

/// Fraction of questions with an answer-bearing passage in the top k.
///
/// The denominator is the full question set; questions without answers or
/// without run entries count as misses.
pub fn topk_accuracy(
    run: &Run,
    questions: &[Question],
    corpus: &HashMap<&str, &Passage>,
    ks: &[usize],
) -> Result<AccuracyReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::validation(
            "k values must be a non-empty set of positive integers",
        ));
    }
    let by_id: HashMap<&str, &Question> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
    if let Some(qid) = run.keys().find(|qid| !by_id.contains_key(qid.as_str())) {
        return Err(Error::validation(format!(
            "run query {qid} is not in the question set"
        )));
    }

    let max_k = ks.iter().copied().max().unwrap_or(0);
    let mut first_hits = Vec::with_capacity(questions.len());
    for question in questions {
        let mut first_hit = None;
        if let Some(entries) = run.get(&question.id) {
            for entry in entries.iter().take(max_k) {
                let passage = corpus.get(entry.passage_id.as_str()).ok_or_else(|| {
                    Error::validation(format!(
                        "query {}: passage {} is not in the corpus",
                        question.id, entry.passage_id
                    ))
                })?;
                if answer_match(&passage.full_text(), &question.answers) {
                    first_hit = Some(entry.rank);
                    break;
                }
            }
        }
        first_hits.push(first_hit);
    }

    let n = questions.len();
    let mut ks_sorted = ks.to_vec();
    ks_sorted.sort_unstable();
    ks_sorted.dedup();
    let per_k: BTreeMap<usize, f64> = ks_sorted
        .iter()
        .map(|&k| {
            let hits = first_hits
                .iter()
                .filter(|h| h.is_some_and(|r| r <= k))
                .count();
            let frac = if n == 0 { 0.0 } else { hits as f64 / n as f64 };
            (k, frac)
        })
        .collect();
    let avg = per_k.values().sum::<f64>() / per_k.len() as f64;
    Ok(AccuracyReport {
        per_k,
        avg,
        n_questions: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NdcgReport {
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
    pub k: usize,
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

fn discount(position: usize) -> f64 {
    ((position + 1) as f64).log2()
}

/// nDCG@k with exponential gain; queries without positive judgments score 0.
pub fn ndcg_at_k(run: &Run, qrels: &Qrels, k: usize) -> Result<NdcgReport> {
    if k == 0 {
        return Err(Error::validation("nDCG cutoff k must be >= 1"));
    }
    let mut per_query = BTreeMap::new();
    for (qid, entries) in run {
        let dcg: f64 = entries
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, e)| gain(qrels.grade(qid, &e.passage_id)) / discount(i + 1))
            .sum();
        let mut ideal: Vec<u32> = qrels
            .judged(qid)
            .map(|m| m.values().copied().collect())
            .unwrap_or_default();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        let idcg: f64 = ideal
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| gain(g) / discount(i + 1))
            .sum();
        let value = if idcg > 0.0 { dcg / idcg } else { 0.0 };
        per_query.insert(qid.clone(), value);
    }
    let mean = if per_query.is_empty() {
        0.0
    } else {
        per_query.values().sum::<f64>() / per_query.len() as f64
    };
    Ok(NdcgReport { per_query, mean, k })
}

/// One metric row of a report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub metric: String,
    pub k: Option<usize>,
    pub value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Report {
    pub rows: Vec<MetricRow>,
}

impl Report {
    pub fn add_accuracy(&mut self, label: &str, report: &AccuracyReport) {
        for (&k, &value) in &report.per_k {
            self.rows.push(MetricRow {
                metric: format!("{label}top_k_accuracy"),
                k: Some(k),
                value,
                n: report.n_questions,
            });
        }
        self.rows.push(MetricRow {
            metric: format!("{label}top_k_accuracy_avg"),
            k: None,
            value: report.avg,
            n: report.n_questions,
        });
    }

    pub fn add_ndcg(&mut self, label: &str, report: &NdcgReport) {
        self.rows.push(MetricRow {
            metric: format!("{label}ndcg"),
            k: Some(report.k),
            value: report.mean,
            n: report.per_query.len(),
        });
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rows).expect("report serializes") + "\n"
    }

    /// Aligned plain-text table, values in percent.
    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.metric.len())
            .max()
            .unwrap_or(6)
            .max(6);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>5}  {:>8}  {:>6}",
            "metric", "k", "value", "n"
        );
        for row in &self.rows {
            let k = row.k.map(|k| k.to_string()).unwrap_or_else(|| "avg".into());
            let _ = writeln!(
                out,
                "{:<width$}  {:>5}  {:>8.2}  {:>6}",
                row.metric,
                k,
                row.value * 100.0,
                row.n
            );
        }
        out
    }
}
