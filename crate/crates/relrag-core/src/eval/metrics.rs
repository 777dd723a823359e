//! Span metrics over token-id sequences.
//!
//! The corpus is token ids, not natural-language strings, so the usual
//! answer normalization (lowercasing, article stripping) reduces to removing
//! reserved ids; everything else is exact sequence or bag comparison.

use std::collections::BTreeMap;

use crate::data::contains_any_gold;
use crate::model::SpecialTokens;
use crate::Token;

use super::EvalError;

/// Strips reserved ids. On token-id data this is the entire answer
/// normalization.
pub fn normalize(tokens: &[Token], specials: &SpecialTokens) -> Vec<Token> {
    tokens.iter().copied().filter(|t| !specials.contains(*t)).collect()
}

fn require_golds(golds: &[Vec<Token>]) -> Result<(), EvalError> {
    if golds.is_empty() {
        return Err(EvalError::Domain("metrics need at least one gold answer".into()));
    }
    Ok(())
}

/// Exact match: 1.0 iff the prediction equals any gold exactly. A strict
/// prefix of a gold scores 0.
pub fn em(prediction: &[Token], golds: &[Vec<Token>]) -> Result<f64, EvalError> {
    require_golds(golds)?;
    Ok(if golds.iter().any(|g| g.as_slice() == prediction) { 1.0 } else { 0.0 })
}

fn bag(tokens: &[Token]) -> BTreeMap<Token, usize> {
    let mut counts = BTreeMap::new();
    for &t in tokens {
        *counts.entry(t).or_insert(0) += 1;
    }
    counts
}

fn f1_against(prediction: &[Token], gold: &[Token]) -> f64 {
    if prediction.is_empty() && gold.is_empty() {
        return 1.0;
    }
    if prediction.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let p = bag(prediction);
    let g = bag(gold);
    let overlap: usize =
        p.iter().map(|(t, &n)| n.min(g.get(t).copied().unwrap_or(0))).sum();
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / prediction.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Bag-of-tokens F1, maximized over golds. Multiplicity counts: a token
/// predicted twice but present once contributes one overlap unit.
pub fn f1(prediction: &[Token], golds: &[Vec<Token>]) -> Result<f64, EvalError> {
    require_golds(golds)?;
    Ok(golds.iter().map(|g| f1_against(prediction, g)).fold(0.0, f64::max))
}

/// 1.0 iff the selected document contains some gold answer as a contiguous
/// subsequence — the same containment rule that defines the binary training
/// label, so "the referenced document was relevant" means the same thing at
/// train and eval time.
pub fn hit_at_1(selected_doc: &[Token], golds: &[Vec<Token>]) -> Result<f64, EvalError> {
    require_golds(golds)?;
    Ok(if contains_any_gold(selected_doc, golds) { 1.0 } else { 0.0 })
}

/// Judgment accuracy: the fraction of documents where the thresholded score
/// `s_rel > 0.5` agrees with the binary truth. The inequality is strict, so
/// a score of exactly 0.5 classifies as irrelevant.
pub fn jacc(judgments: &[f64], truth: &[u8]) -> Result<f64, EvalError> {
    if judgments.len() != truth.len() {
        return Err(EvalError::Domain(format!(
            "{} judgments for {} truth labels",
            judgments.len(),
            truth.len()
        )));
    }
    if judgments.is_empty() {
        return Err(EvalError::Domain("jacc needs at least one document".into()));
    }
    for (i, &s) in judgments.iter().enumerate() {
        if !s.is_finite() {
            return Err(EvalError::Domain(format!("judgment {i} is not finite")));
        }
        if truth[i] > 1 {
            return Err(EvalError::Domain(format!("truth label {} at {i} not binary", truth[i])));
        }
    }
    let agree = judgments
        .iter()
        .zip(truth)
        .filter(|(&s, &y)| (s > 0.5) == (y == 1))
        .count();
    Ok(agree as f64 / judgments.len() as f64)
}
