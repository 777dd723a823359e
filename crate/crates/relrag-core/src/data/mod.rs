//! Data types, labeling rules, hard-negative sampling, and the synthetic
//! planted-answer corpus.
//!
//! The labeling chain is: a deterministic lexical-overlap oracle stands in
//! for a learned cross-encoder ([`oracle_score`]), a containment rule gives
//! the binary label `y` ([`contains_any_gold`]), and the two fuse into the
//! teacher relevance label `(s_ce + y)/2` ([`label_machine`]). Training
//! negatives come from [`sample_negatives`], which draws candidates with
//! piecewise-Gaussian weights centered near the positive's score — hard but
//! not false negatives.
//!
//! Datasets live on disk as line-delimited JSON, one example per line
//! ([`write_jsonl`]/[`read_jsonl`]); that file is the only contract between
//! data generation, training, and evaluation.

mod corpus;
mod dataset;
mod oracle;
mod sampler;

pub use corpus::{generate_corpus, CorpusSpec, TokenSpace};
pub use dataset::{read_jsonl, write_jsonl};
pub use oracle::{contains_any_gold, contains_subsequence, label_machine, oracle_score};
pub use sampler::{sample_negatives, sampling_weight, SampledNegatives, SamplerParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Token;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid corpus config: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// A retrieved document with its relevance labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDocument {
    pub tokens: Vec<Token>,
    /// Binary relevance: 1 iff the document contains a gold answer as a
    /// contiguous subsequence.
    pub y: u8,
    /// Oracle (stand-in cross-encoder) score in `[0, 1]`.
    pub s_ce: f64,
    /// Fused teacher label `(s_ce + y)/2`.
    pub s_rel_label: f64,
}

/// Which split an example belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// One question with its gold answers and retrieved documents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaExample {
    pub id: u64,
    pub query_tokens: Vec<Token>,
    /// Gold answer token sequences, at least one.
    pub answers: Vec<Vec<Token>>,
    pub documents: Vec<ScoredDocument>,
    pub split: Split,
}

impl QaExample {
    /// Structural validation used on every deserialized record.
    pub fn validate(&self) -> Result<(), DataError> {
        if self.query_tokens.is_empty() {
            return Err(DataError::Domain(format!("example {}: empty query", self.id)));
        }
        if self.answers.is_empty() || self.answers.iter().any(|a| a.is_empty()) {
            return Err(DataError::Domain(format!(
                "example {}: answers must be non-empty token sequences",
                self.id
            )));
        }
        for (i, doc) in self.documents.iter().enumerate() {
            if doc.y > 1 {
                return Err(DataError::Domain(format!(
                    "example {} doc {i}: binary label {} not in {{0,1}}",
                    self.id, doc.y
                )));
            }
            for (name, v) in [("s_ce", doc.s_ce), ("s_rel_label", doc.s_rel_label)] {
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(DataError::Domain(format!(
                        "example {} doc {i}: {name} = {v} outside [0, 1]",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Borrowing filter over one split.
pub fn of_split(examples: &[QaExample], split: Split) -> Vec<&QaExample> {
    examples.iter().filter(|e| e.split == split).collect()
}
