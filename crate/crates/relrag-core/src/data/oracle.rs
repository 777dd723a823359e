//! Deterministic labeling rules: the lexical-overlap relevance oracle, the
//! answer-containment binary label, and the fused teacher label.

use std::collections::BTreeSet;

use super::DataError;
use crate::Token;

/// Stand-in cross-encoder: the fraction of the query's distinct tokens that
/// occur anywhere in the document, `|unique(q) ∩ unique(d)| / |unique(q)|`.
///
/// Deterministic, symmetric under document token reordering, and bounded in
/// `[0, 1]`. A learned reranker can replace it wherever an `fn(&[Token],
/// &[Token]) -> f64` fits.
pub fn oracle_score(query: &[Token], doc: &[Token]) -> Result<f64, DataError> {
    if query.is_empty() {
        return Err(DataError::Domain("oracle_score requires a non-empty query".into()));
    }
    let q: BTreeSet<Token> = query.iter().copied().collect();
    let d: BTreeSet<Token> = doc.iter().copied().collect();
    Ok(q.intersection(&d).count() as f64 / q.len() as f64)
}

/// Fused teacher relevance label `(s_ce + y) / 2`: the oracle score averaged
/// with the binary label, mapping `[0,1] × {0,1}` onto `[0,1]`.
pub fn label_machine(s_ce: f64, y: u8) -> Result<f64, DataError> {
    if !s_ce.is_finite() || !(0.0..=1.0).contains(&s_ce) {
        return Err(DataError::Domain(format!("oracle score {s_ce} outside [0, 1]")));
    }
    if y > 1 {
        return Err(DataError::Domain(format!("binary label {y} not in {{0,1}}")));
    }
    Ok((s_ce + y as f64) / 2.0)
}

/// Contiguous-subsequence containment. The empty needle is vacuously
/// contained.
pub fn contains_subsequence(haystack: &[Token], needle: &[Token]) -> bool {
    if needle.is_empty() {
        return true;
    }
    needle.len() <= haystack.len() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// The binary relevance rule: does the document contain any gold answer as a
/// contiguous subsequence? Used both to label training data and as
/// evaluation-time relevance ground truth.
pub fn contains_any_gold(doc: &[Token], golds: &[Vec<Token>]) -> bool {
    golds.iter().any(|g| contains_subsequence(doc, g))
}
