//! Passage re-ranking driven by question type.
//!
//! Pipeline: BM25 (or an imported run) retrieves candidates, a linear
//! classifier assigns each question a coarse/fine type, the type selects a
//! prompt template, and candidates are re-ordered by the average
//! log-likelihood of the question given prompt and passage.

pub mod bm25;
pub mod classifier;
pub mod corpus;
mod error;
pub mod eval;
pub mod prompt;
pub mod rerank;
pub mod scorer;
pub mod taxonomy;

pub use error::{Error, ErrorKind, Result};

use std::collections::HashMap;

use corpus::Passage;

/// Borrowing id -> passage lookup.
pub fn passage_lookup(passages: &[Passage]) -> HashMap<&str, &Passage> {
    passages.iter().map(|p| (p.id.as_str(), p)).collect()
}
