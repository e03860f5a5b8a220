//! Corpora, query sets, TREC run files and qrels.
//!
//! Corpus and query files are JSON lines. Runs use the six-column TREC
//! layout `qid Q0 docid rank score tag`; qrels use `qid 0 docid grade`.
//! Every parse error carries the 1-based line number of the offending line.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{QuestionType, Taxonomy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    #[serde(alias = "_id")]
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub text: String,
}

impl Passage {
    pub fn new(id: impl Into<String>, title: Option<&str>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: title.map(str::to_string),
            text: text.into(),
        }
    }

    /// Title and body joined by a single space.
    pub fn full_text(&self) -> String {
        match self.title.as_deref() {
            Some(title) if !title.is_empty() => format!("{title} {}", self.text),
            _ => self.text.clone(),
        }
    }

    /// Passages with a blank body are accepted but flagged.
    pub fn is_degenerate(&self) -> bool {
        self.text.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Question {
    pub id: String,
    pub text: String,
    pub answers: Vec<String>,
    pub gold_type: Option<QuestionType>,
}

impl Question {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            answers: Vec::new(),
            gold_type: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub query_id: String,
    pub passage_id: String,
    pub rank: usize,
    pub score: f64,
    pub tag: String,
}

/// Ranked entries per query, in query input order.
pub type Run = IndexMap<String, Vec<RunEntry>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryFormat {
    Jsonl,
    Tsv,
}

impl QueryFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") => QueryFormat::Tsv,
            _ => QueryFormat::Jsonl,
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn source_name(path: &Path) -> String {
    path.display().to_string()
}

/// Iterates non-blank lines as `(1-based line number, line)`.
fn numbered_lines<'a, R: BufRead + 'a>(
    reader: R,
    name: &'a str,
) -> impl Iterator<Item = Result<(usize, String)>> + 'a {
    reader
        .lines()
        .enumerate()
        .map(move |(i, line)| {
            line.map(|l| (i + 1, l.trim_end_matches('\r').to_string()))
                .map_err(|e| Error::parse(name, i + 1, e.to_string()))
        })
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty()))
}

pub fn load_corpus(path: &Path) -> Result<Vec<Passage>> {
    parse_corpus(open(path)?, &source_name(path))
}

pub fn parse_corpus<R: BufRead>(reader: R, name: &str) -> Result<Vec<Passage>> {
    let mut seen = HashSet::new();
    let mut passages = Vec::new();
    for item in numbered_lines(reader, name) {
        let (line_no, line) = item?;
        let passage: Passage =
            serde_json::from_str(&line).map_err(|e| Error::parse(name, line_no, e.to_string()))?;
        if passage.id.is_empty() {
            return Err(Error::parse(name, line_no, "empty passage id"));
        }
        if !seen.insert(passage.id.clone()) {
            return Err(Error::validation(format!(
                "{name}:{line_no}: duplicate passage id {:?}",
                passage.id
            )));
        }
        if passage.is_degenerate() {
            log::warn!("{name}:{line_no}: passage {:?} has empty text", passage.id);
        }
        passages.push(passage);
    }
    Ok(passages)
}

pub fn write_corpus(passages: &[Passage], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for p in passages {
        let line = serde_json::to_string(p).expect("passage serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct QueryRecord {
    #[serde(alias = "_id")]
    id: String,
    #[serde(alias = "text")]
    question: String,
    #[serde(default)]
    answers: Vec<String>,
    #[serde(default, rename = "type")]
    qtype: Option<String>,
}

/// Loads a query set. TSV rows are `id<TAB>question[<TAB>answers-json[<TAB>MAJ:min]]`.
pub fn load_queries(
    path: &Path,
    format: QueryFormat,
    taxonomy: &Taxonomy,
) -> Result<Vec<Question>> {
    parse_queries(open(path)?, format, taxonomy, &source_name(path))
}

pub fn parse_queries<R: BufRead>(
    reader: R,
    format: QueryFormat,
    taxonomy: &Taxonomy,
    name: &str,
) -> Result<Vec<Question>> {
    let mut seen = HashSet::new();
    let mut questions = Vec::new();
    for item in numbered_lines(reader, name) {
        let (line_no, line) = item?;
        let record = match format {
            QueryFormat::Jsonl => serde_json::from_str::<QueryRecord>(&line)
                .map_err(|e| Error::parse(name, line_no, e.to_string()))?,
            QueryFormat::Tsv => {
                parse_tsv_query(&line).map_err(|m| Error::parse(name, line_no, m))?
            }
        };
        if record.id.is_empty() {
            return Err(Error::parse(name, line_no, "empty query id"));
        }
        if record.question.trim().is_empty() {
            return Err(Error::parse(name, line_no, "empty question text"));
        }
        if !seen.insert(record.id.clone()) {
            return Err(Error::validation(format!(
                "{name}:{line_no}: duplicate query id {:?}",
                record.id
            )));
        }
        let gold_type = match record.qtype.as_deref() {
            Some(label) => Some(
                taxonomy
                    .parse_label(label)
                    .map_err(|e| Error::validation(format!("{name}:{line_no}: {e}")))?,
            ),
            None => None,
        };
        questions.push(Question {
            id: record.id,
            text: record.question,
            answers: record.answers,
            gold_type,
        });
    }
    Ok(questions)
}

fn parse_tsv_query(line: &str) -> std::result::Result<QueryRecord, String> {
    let cols: Vec<&str> = line.split('\t').collect();
    if !(2..=4).contains(&cols.len()) {
        return Err(format!(
            "expected 2 to 4 tab-separated columns, found {}",
            cols.len()
        ));
    }
    let answers = match cols.get(2).map(|s| s.trim()) {
        Some(json) if !json.is_empty() => {
            serde_json::from_str(json).map_err(|e| format!("answers column: {e}"))?
        }
        _ => Vec::new(),
    };
    Ok(QueryRecord {
        id: cols[0].to_string(),
        question: cols[1].to_string(),
        answers,
        qtype: cols
            .get(3)
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty()),
    })
}

pub fn read_run(path: &Path) -> Result<Run> {
    parse_run(open(path)?, &source_name(path))
}

pub fn parse_run<R: BufRead>(reader: R, name: &str) -> Result<Run> {
    let mut run: Run = IndexMap::new();
    for item in numbered_lines(reader, name) {
        let (line_no, line) = item?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(Error::parse(
                name,
                line_no,
                format!("expected 6 columns, found {}", cols.len()),
            ));
        }
        let rank: usize =
            cols[3].parse().ok().filter(|&r| r >= 1).ok_or_else(|| {
                Error::parse(name, line_no, format!("invalid rank {:?}", cols[3]))
            })?;
        let score: f64 = cols[4]
            .parse()
            .ok()
            .filter(|s: &f64| !s.is_nan())
            .ok_or_else(|| {
                Error::parse(name, line_no, format!("non-numeric score {:?}", cols[4]))
            })?;
        run.entry(cols[0].to_string()).or_default().push(RunEntry {
            query_id: cols[0].to_string(),
            passage_id: cols[2].to_string(),
            rank,
            score,
            tag: cols[5].to_string(),
        });
    }
    for entries in run.values_mut() {
        entries.sort_by_key(|e| e.rank);
    }
    validate_run(&run)?;
    Ok(run)
}

/// Ranks per query must be exactly 1..n and scores non-increasing with rank.
pub fn validate_run(run: &Run) -> Result<()> {
    for (qid, entries) in run {
        let mut passages = HashSet::new();
        for (i, entry) in entries.iter().enumerate() {
            if entry.rank != i + 1 {
                return Err(Error::validation(format!(
                    "query {qid}: ranks are not 1..{} (found rank {} at position {})",
                    entries.len(),
                    entry.rank,
                    i + 1
                )));
            }
            if &entry.query_id != qid {
                return Err(Error::validation(format!(
                    "query {qid}: entry belongs to {}",
                    entry.query_id
                )));
            }
            if !passages.insert(entry.passage_id.as_str()) {
                return Err(Error::validation(format!(
                    "query {qid}: passage {} listed twice",
                    entry.passage_id
                )));
            }
            if i > 0 && entry.score > entries[i - 1].score {
                return Err(Error::validation(format!(
                    "query {qid}: score increases from rank {} to rank {}",
                    i,
                    i + 1
                )));
            }
        }
    }
    Ok(())
}

/// Writes `qid Q0 docid rank score tag` lines; a non-empty `tag` overrides each entry's tag.
pub fn write_run(run: &Run, path: &Path, tag: &str) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_run_to(run, &mut out, tag).map_err(|e| match e {
        WriteError::Io(err) => Error::io(path, err),
        WriteError::Invalid(err) => err,
    })?;
    out.flush().map_err(|e| Error::io(path, e))
}

enum WriteError {
    Io(std::io::Error),
    Invalid(Error),
}

fn write_run_to<W: Write>(
    run: &Run,
    out: &mut W,
    tag: &str,
) -> std::result::Result<(), WriteError> {
    validate_run(run).map_err(WriteError::Invalid)?;
    for entries in run.values() {
        for e in entries {
            let tag = if tag.is_empty() { e.tag.as_str() } else { tag };
            writeln!(
                out,
                "{} Q0 {} {} {:.6} {}",
                e.query_id, e.passage_id, e.rank, e.score, tag
            )
            .map_err(WriteError::Io)?;
        }
    }
    Ok(())
}

/// Renders a run to a string in the same format as [`write_run`].
pub fn format_run(run: &Run, tag: &str) -> Result<String> {
    let mut buf = Vec::new();
    write_run_to(run, &mut buf, tag).map_err(|e| match e {
        WriteError::Io(err) => Error::validation(err.to_string()),
        WriteError::Invalid(err) => err,
    })?;
    Ok(String::from_utf8(buf).expect("run output is utf-8"))
}

/// Graded judgments. Unknown pairs have grade 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels {
    grades: IndexMap<String, HashMap<String, u32>>,
    /// Number of repeated (query, passage) lines; the last grade wins.
    pub warn_count: usize,
}

impl Qrels {
    pub fn grade(&self, query_id: &str, passage_id: &str) -> u32 {
        self.grades
            .get(query_id)
            .and_then(|m| m.get(passage_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn judged(&self, query_id: &str) -> Option<&HashMap<String, u32>> {
        self.grades.get(query_id)
    }

    pub fn insert(&mut self, query_id: &str, passage_id: &str, grade: u32) {
        let previous = self
            .grades
            .entry(query_id.to_string())
            .or_default()
            .insert(passage_id.to_string(), grade);
        if previous.is_some() {
            self.warn_count += 1;
        }
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.grades.keys().map(String::as_str)
    }
}

pub fn read_qrels(path: &Path) -> Result<Qrels> {
    parse_qrels(open(path)?, &source_name(path))
}

pub fn parse_qrels<R: BufRead>(reader: R, name: &str) -> Result<Qrels> {
    let mut qrels = Qrels::default();
    for item in numbered_lines(reader, name) {
        let (line_no, line) = item?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(Error::parse(
                name,
                line_no,
                format!("expected 4 columns, found {}", cols.len()),
            ));
        }
        let grade: i64 = cols[3]
            .parse()
            .map_err(|_| Error::parse(name, line_no, format!("non-integer grade {:?}", cols[3])))?;
        if grade < 0 {
            return Err(Error::validation(format!(
                "{name}:{line_no}: negative grade {grade}"
            )));
        }
        let grade = u32::try_from(grade)
            .map_err(|_| Error::parse(name, line_no, format!("grade {grade} out of range")))?;
        qrels.insert(cols[0], cols[2], grade);
    }
    if qrels.warn_count > 0 {
        log::warn!(
            "{name}: {} repeated judgment(s); last grade kept",
            qrels.warn_count
        );
    }
    Ok(qrels)
}
