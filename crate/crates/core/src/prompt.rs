//! Question-type conditioned prompt templates.
//!
//! Templates are keyed by an exact type (`HUM:ind`), a major wildcard
//! (`HUM:*`) or the default (`*`). Lookup falls through in that order.
//! Patterns may use `{passage}` (exactly once), `{major_phrase}` and
//! `{minor_phrase}`; the default template may only use `{passage}`.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::corpus::Passage;
use crate::error::{Error, Result};
use crate::taxonomy::{QuestionType, Taxonomy};

const DEFAULT_TEMPLATES: &str = include_str!("../data/templates.tsv");

/// The prompt used when no type-specific template applies.
pub const STATIC_PROMPT: &str =
    "Document: {passage}. Please write a question based on this passage.";

const PASSAGE: &str = "{passage}";
const MAJOR_PHRASE: &str = "{major_phrase}";
const MINOR_PHRASE: &str = "{minor_phrase}";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
#[serde(into = "String")]
pub enum TemplateKey {
    Exact(QuestionType),
    Major(String),
    Default,
}

impl TemplateKey {
    pub fn parse(key: &str) -> Option<Self> {
        let key = key.trim();
        if key == "*" {
            return Some(TemplateKey::Default);
        }
        let (major, minor) = key.split_once(':')?;
        if major.is_empty() || major == "*" {
            return None;
        }
        if minor == "*" {
            Some(TemplateKey::Major(major.to_string()))
        } else {
            QuestionType::parse_unchecked(key).map(TemplateKey::Exact)
        }
    }
}

impl fmt::Display for TemplateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TemplateKey::Exact(qt) => write!(f, "{qt}"),
            TemplateKey::Major(major) => write!(f, "{major}:*"),
            TemplateKey::Default => f.write_str("*"),
        }
    }
}

impl From<TemplateKey> for String {
    fn from(key: TemplateKey) -> Self {
        key.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub key: TemplateKey,
    pub pattern: String,
}

impl PromptTemplate {
    pub fn new(key: TemplateKey, pattern: impl Into<String>) -> Result<Self> {
        let pattern = pattern.into();
        let count = pattern.matches(PASSAGE).count();
        if count != 1 {
            return Err(Error::validation(format!(
                "template {key}: pattern must contain {PASSAGE} exactly once (found {count})"
            )));
        }
        if key == TemplateKey::Default
            && (pattern.contains(MAJOR_PHRASE) || pattern.contains(MINOR_PHRASE))
        {
            return Err(Error::validation(
                "the default template cannot use {major_phrase} or {minor_phrase}",
            ));
        }
        Ok(Self { key, pattern })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub source_key: TemplateKey,
    pub truncated: bool,
}

/// Whether prompts follow the question type or always use the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    #[default]
    Dynamic,
    Static,
}

#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: HashMap<TemplateKey, PromptTemplate>,
    taxonomy: Taxonomy,
}

impl TemplateRegistry {
    /// Shipped templates: one per major class of the default taxonomy, plus the default.
    pub fn shipped(taxonomy: Taxonomy) -> Self {
        Self::parse(DEFAULT_TEMPLATES, "<shipped templates>", taxonomy)
            .expect("bundled templates are valid")
    }

    /// A registry holding only the default template.
    pub fn default_only(taxonomy: Taxonomy) -> Self {
        let template = PromptTemplate::new(TemplateKey::Default, STATIC_PROMPT).expect("valid");
        Self {
            templates: HashMap::from([(TemplateKey::Default, template)]),
            taxonomy,
        }
    }

    pub fn load(path: &Path, taxonomy: Taxonomy) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string(), taxonomy)
    }

    /// Parses `key<TAB>pattern` lines; `#` starts a comment line.
    pub fn parse(text: &str, source_name: &str, taxonomy: Taxonomy) -> Result<Self> {
        let mut templates = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, pattern) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(source_name, i + 1, "expected key<TAB>pattern"))?;
            let key = TemplateKey::parse(key)
                .ok_or_else(|| Error::parse(source_name, i + 1, format!("invalid key {key:?}")))?;
            let template = PromptTemplate::new(key.clone(), pattern)
                .map_err(|e| Error::validation(format!("{source_name}:{}: {e}", i + 1)))?;
            if templates.insert(key.clone(), template).is_some() {
                return Err(Error::validation(format!(
                    "{source_name}:{}: duplicate template key {key}",
                    i + 1
                )));
            }
        }
        if !templates.contains_key(&TemplateKey::Default) {
            return Err(Error::validation(format!(
                "{source_name}: no default (*) template"
            )));
        }
        Ok(Self {
            templates,
            taxonomy,
        })
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn get(&self, key: &TemplateKey) -> Option<&PromptTemplate> {
        self.templates.get(key)
    }

    /// Exact type, then major wildcard, then default.
    pub fn lookup(&self, qtype: Option<&QuestionType>) -> &PromptTemplate {
        if let Some(qt) = qtype {
            if let Some(t) = self.templates.get(&TemplateKey::Exact(qt.clone())) {
                return t;
            }
            if let Some(t) = self.templates.get(&TemplateKey::Major(qt.major.clone())) {
                return t;
            }
        }
        &self.templates[&TemplateKey::Default]
    }

    pub fn render(
        &self,
        qtype: Option<&QuestionType>,
        passage: &Passage,
        max_passage_tokens: usize,
    ) -> RenderedPrompt {
        let template = self.lookup(qtype);
        self.render_with(template, qtype, passage, max_passage_tokens)
    }

    /// Renders with an explicit template.
    pub fn render_with(
        &self,
        template: &PromptTemplate,
        qtype: Option<&QuestionType>,
        passage: &Passage,
        max_passage_tokens: usize,
    ) -> RenderedPrompt {
        let (passage_text, truncated) =
            truncate_tokens(&passage.full_text(), max_passage_tokens.max(1));
        let mut text = template.pattern.clone();
        if let Some(qt) = qtype {
            text = text
                .replace(MAJOR_PHRASE, &self.taxonomy.major_phrase(&qt.major))
                .replace(MINOR_PHRASE, &self.taxonomy.minor_phrase(qt));
        }
        // substitute the passage last so its own text is never re-expanded
        let text = text.replacen(PASSAGE, &passage_text, 1);
        RenderedPrompt {
            text,
            source_key: template.key.clone(),
            truncated,
        }
    }
}

/// Keeps the first `max_tokens` whitespace tokens.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> (String, bool) {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() <= max_tokens {
        (text.to_string(), false)
    } else {
        (tokens[..max_tokens].join(" "), true)
    }
}
