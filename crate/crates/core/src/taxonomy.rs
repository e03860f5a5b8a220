//! Coarse/fine question-type label space.
//!
//! A taxonomy is loaded from a tab-separated table with one line per fine
//! class (`MAJOR<TAB>minor<TAB>code<TAB>description`). Lines whose minor
//! column is `*` (code `-`) describe a major class itself; they are optional
//! and only feed the prompt phrases. `#` starts a comment line.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_TABLE: &str = include_str!("../data/taxonomy.tsv");
const DESC_ROWS: &str = include_str!("../data/taxonomy_desc.tsv");

/// A (major, minor) question type such as `HUM:ind`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QuestionType {
    pub major: String,
    pub minor: String,
}

impl QuestionType {
    pub fn new(major: impl Into<String>, minor: impl Into<String>) -> Self {
        Self {
            major: major.into(),
            minor: minor.into(),
        }
    }

    /// Splits a `MAJ:min` label without checking it against any taxonomy.
    pub fn parse_unchecked(label: &str) -> Option<Self> {
        let (major, minor) = label.trim().split_once(':')?;
        if major.is_empty() || minor.is_empty() || minor.contains(':') {
            return None;
        }
        Some(Self::new(major, minor))
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.major, self.minor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinorClass {
    pub label: QuestionType,
    pub code: u32,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MajorClass {
    pub label: String,
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    majors: Vec<MajorClass>,
    minors: Vec<MinorClass>,
    by_label: HashMap<QuestionType, usize>,
}

impl Taxonomy {
    /// The shipped five-major table (ABBR, ENTY, HUM, LOC, NUM).
    pub fn default_table() -> Self {
        Self::parse(DEFAULT_TABLE, "<default taxonomy>").expect("bundled taxonomy is valid")
    }

    /// The default table plus the DESC classes found in the UIUC label files.
    pub fn uiuc_table() -> Self {
        Self::parse(&format!("{DEFAULT_TABLE}{DESC_ROWS}"), "<uiuc taxonomy>")
            .expect("bundled taxonomy is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut majors: Vec<MajorClass> = Vec::new();
        let mut minors: Vec<MinorClass> = Vec::new();
        let mut codes = HashSet::new();
        let mut by_label = HashMap::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(Error::parse(
                    source_name,
                    line_no,
                    format!("expected 4 tab-separated columns, found {}", cols.len()),
                ));
            }
            let (major, minor, code, description) = (
                cols[0].trim(),
                cols[1].trim(),
                cols[2].trim(),
                cols[3].trim(),
            );
            if major.is_empty() || major.contains(':') {
                return Err(Error::parse(source_name, line_no, "invalid major label"));
            }

            let major_pos = match majors.iter().position(|m| m.label == major) {
                Some(pos) => pos,
                None => {
                    majors.push(MajorClass {
                        label: major.to_string(),
                        description: None,
                    });
                    majors.len() - 1
                }
            };

            if minor == "*" {
                if majors[major_pos].description.is_some() {
                    return Err(Error::parse(
                        source_name,
                        line_no,
                        format!("major {major} described twice"),
                    ));
                }
                majors[major_pos].description = Some(description.to_string());
                continue;
            }
            if minor.is_empty() || minor.contains(':') {
                return Err(Error::parse(source_name, line_no, "invalid minor label"));
            }
            let code: u32 = code.parse().map_err(|_| {
                Error::parse(
                    source_name,
                    line_no,
                    format!("invalid numeric code {code:?}"),
                )
            })?;
            if !codes.insert(code) {
                return Err(Error::parse(
                    source_name,
                    line_no,
                    format!("duplicate numeric code {code}"),
                ));
            }
            let label = QuestionType::new(major, minor);
            if by_label.contains_key(&label) {
                return Err(Error::parse(
                    source_name,
                    line_no,
                    format!("duplicate label {label}"),
                ));
            }
            by_label.insert(label.clone(), minors.len());
            minors.push(MinorClass {
                label,
                code,
                description: description.to_string(),
            });
        }

        if minors.is_empty() {
            return Err(Error::validation(format!(
                "{source_name}: taxonomy has no classes"
            )));
        }
        if let Some(empty) = majors
            .iter()
            .find(|m| !minors.iter().any(|c| c.label.major == m.label))
        {
            return Err(Error::validation(format!(
                "{source_name}: major {} has no minor classes",
                empty.label
            )));
        }

        Ok(Self {
            majors,
            minors,
            by_label,
        })
    }

    pub fn majors(&self) -> &[MajorClass] {
        &self.majors
    }

    pub fn minors(&self) -> &[MinorClass] {
        &self.minors
    }

    pub fn minors_of<'a>(&'a self, major: &'a str) -> impl Iterator<Item = &'a MinorClass> + 'a {
        self.minors.iter().filter(move |c| c.label.major == major)
    }

    pub fn get(&self, label: &QuestionType) -> Option<&MinorClass> {
        self.by_label.get(label).map(|&i| &self.minors[i])
    }

    pub fn contains(&self, label: &QuestionType) -> bool {
        self.by_label.contains_key(label)
    }

    pub fn has_major(&self, major: &str) -> bool {
        self.majors.iter().any(|m| m.label == major)
    }

    pub fn code(&self, label: &QuestionType) -> Option<u32> {
        self.get(label).map(|c| c.code)
    }

    /// Parses and validates a `MAJ:min` label.
    pub fn parse_label(&self, label: &str) -> Result<QuestionType> {
        QuestionType::parse_unchecked(label)
            .filter(|qt| self.contains(qt))
            .ok_or_else(|| {
                let valid: Vec<String> = self.minors.iter().map(|c| c.label.to_string()).collect();
                Error::validation(format!(
                    "unknown question type {label:?}; valid labels: {}",
                    valid.join(", ")
                ))
            })
    }

    /// Phrase used in prompts for a major class, e.g. `HUM` -> "humans".
    pub fn major_phrase(&self, major: &str) -> String {
        let description = self
            .majors
            .iter()
            .find(|m| m.label == major)
            .and_then(|m| m.description.as_deref())
            .unwrap_or(major);
        phrase(description)
    }

    /// Phrase used in prompts for a fine class, e.g. `HUM:ind` -> "individuals".
    pub fn minor_phrase(&self, label: &QuestionType) -> String {
        match self.get(label) {
            Some(class) => phrase(&class.description),
            None => phrase(&label.minor),
        }
    }
}

/// Lowercases a description; single-word descriptions are pluralized.
fn phrase(description: &str) -> String {
    let lower = description.trim().to_lowercase();
    if lower.contains(char::is_whitespace) || lower.is_empty() {
        return lower;
    }
    pluralize(&lower)
}

fn pluralize(word: &str) -> String {
    let chars: Vec<char> = word.chars().collect();
    let last = chars[chars.len() - 1];
    let before_last = chars.len().checked_sub(2).map(|i| chars[i]);
    if last == 'y' && before_last.is_some_and(|c| !"aeiou".contains(c)) {
        format!("{}ies", &word[..word.len() - 1])
    } else if word.ends_with('s')
        || word.ends_with('x')
        || word.ends_with("ch")
        || word.ends_with("sh")
    {
        format!("{word}es")
    } else {
        format!("{word}s")
    }
}
