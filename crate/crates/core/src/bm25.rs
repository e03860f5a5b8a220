//! Inverted index and BM25 first-stage retrieval.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Passage, RunEntry};
use crate::error::{Error, Result};

const SNAPSHOT_MAGIC: &str = "dynrank-bm25-index";
const SNAPSHOT_VERSION: u32 = 1;

/// Lowercase, split on non-alphanumeric characters, drop empty tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Analyzer;

impl Analyzer {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 >= 0.0 && self.k1.is_finite()) {
            return Err(Error::Config(format!("k1 must be >= 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Config(format!(
                "b must lie in [0, 1], got {}",
                self.b
            )));
        }
        Ok(())
    }
}

/// One posting: passage ordinal and term frequency.
pub type Posting = (u32, u32);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvertedIndex {
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    ids: Vec<String>,
    analyzer: Analyzer,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    magic: String,
    version: u32,
    index: InvertedIndex,
}

impl InvertedIndex {
    /// Indexes `title + " " + text` of every passage.
    pub fn build(corpus: &[Passage], analyzer: Analyzer) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::validation("cannot index an empty corpus"));
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        let mut ids = Vec::with_capacity(corpus.len());

        for (ordinal, passage) in corpus.iter().enumerate() {
            let ordinal = u32::try_from(ordinal)
                .map_err(|_| Error::validation("corpus exceeds u32::MAX passages"))?;
            let tokens = analyzer.tokenize(&passage.full_text());
            doc_lengths.push(tokens.len() as u32);
            ids.push(passage.id.clone());

            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for token in tokens {
                *counts.entry(token).or_default() += 1;
            }
            // ordinals are visited in increasing order, so each list stays sorted
            for (term, tf) in counts {
                postings.entry(term).or_default().push((ordinal, tf));
            }
        }

        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avg_doc_length = total as f64 / doc_lengths.len() as f64;
        Ok(Self {
            postings,
            doc_lengths,
            avg_doc_length,
            ids,
            analyzer,
        })
    }

    pub fn doc_count(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn passage_id(&self, ordinal: u32) -> Option<&str> {
        self.ids.get(ordinal as usize).map(String::as_str)
    }

    pub fn analyzer(&self) -> Analyzer {
        self.analyzer
    }

    pub fn term_frequency(&self, term: &str, ordinal: u32) -> u32 {
        let list = self.postings(term);
        list.binary_search_by_key(&ordinal, |&(o, _)| o)
            .map(|i| list[i].1)
            .unwrap_or(0)
    }

    /// Robertson IDF with the +1 inside the log, so it is never negative.
    pub fn idf(&self, term: &str) -> f64 {
        let m = self.doc_count() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (m - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, params: &Bm25Params, idf: f64, tf: u32, doc_len: u32) -> f64 {
        let tf = f64::from(tf);
        let norm = 1.0 - params.b + params.b * f64::from(doc_len) / self.avg_doc_length;
        idf * tf * (params.k1 + 1.0) / (tf + params.k1 * norm)
    }

    /// BM25 score of one passage, summed over `query_terms` in order.
    pub fn score(&self, params: &Bm25Params, query_terms: &[String], ordinal: u32) -> Result<f64> {
        let doc_len = *self.doc_lengths.get(ordinal as usize).ok_or_else(|| {
            Error::validation(format!(
                "passage ordinal {ordinal} out of range (corpus has {})",
                self.doc_count()
            ))
        })?;
        let mut score = 0.0;
        for term in query_terms {
            let tf = self.term_frequency(term, ordinal);
            if tf > 0 {
                score += self.term_weight(params, self.idf(term), tf, doc_len);
            }
        }
        Ok(score)
    }

    /// Top `k` passages by descending score; ties go to the smaller passage id.
    pub fn retrieve(
        &self,
        params: &Bm25Params,
        query_id: &str,
        question: &str,
        k: usize,
    ) -> Result<Vec<RunEntry>> {
        if k == 0 {
            return Err(Error::validation("retrieval depth k must be >= 1"));
        }
        let terms = self.analyzer.tokenize(question);
        let mut scores = vec![0.0f64; self.doc_count()];
        // term-at-a-time accumulation, same summation order as `score`
        for term in &terms {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let idf = self.idf(term);
            for &(ordinal, tf) in list {
                let i = ordinal as usize;
                scores[i] += self.term_weight(params, idf, tf, self.doc_lengths[i]);
            }
        }

        let mut order: Vec<u32> = (0..self.doc_count() as u32).collect();
        let cmp = |a: &u32, b: &u32| {
            scores[*b as usize]
                .total_cmp(&scores[*a as usize])
                .then_with(|| self.ids[*a as usize].cmp(&self.ids[*b as usize]))
        };
        let k = k.min(order.len());
        if k < order.len() {
            order.select_nth_unstable_by(k - 1, cmp);
            order.truncate(k);
        }
        order.sort_unstable_by(cmp);

        Ok(order
            .into_iter()
            .enumerate()
            .map(|(i, ordinal)| RunEntry {
                query_id: query_id.to_string(),
                passage_id: self.ids[ordinal as usize].clone(),
                rank: i + 1,
                score: scores[ordinal as usize],
                tag: "bm25".to_string(),
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let snapshot = Snapshot {
            magic: SNAPSHOT_MAGIC.to_string(),
            version: SNAPSHOT_VERSION,
            index: self.clone(),
        };
        serde_json::to_writer(&mut out, &snapshot)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let snapshot: Snapshot = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| Error::Model(format!("{}: {e}", path.display())))?;
        if snapshot.magic != SNAPSHOT_MAGIC || snapshot.version != SNAPSHOT_VERSION {
            return Err(Error::Model(format!(
                "{}: not a version {SNAPSHOT_VERSION} index snapshot",
                path.display()
            )));
        }
        Ok(snapshot.index)
    }
}
