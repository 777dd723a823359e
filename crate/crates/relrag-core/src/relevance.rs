//! Relevance assessment and its supervision: the probe that turns a hidden
//! state into a score, a coarse binary loss, and a fine pairwise ranking
//! loss over documents retrieved for the same query.
//!
//! | piece | form | role |
//! |---|---|---|
//! | [`assess`] | `z = w·v + b`, `s = σ(z)` | scalar relevance from the ASSESS hidden state |
//! | [`coarse_loss`] | mean binary cross-entropy on `z` vs `y ∈ {0,1}` | is the document relevant at all |
//! | [`fine_loss`] | mean `−ln σ(z_i − z_j)` over qualifying pairs | order documents of one query by teacher label |
//! | [`bi_granularity_loss`] | coarse + fine | the combined assessment objective |
//!
//! A pair `(i, j)` qualifies for the fine loss when the teacher labels are
//! separated by at least [`PREFERENCE_MARGIN`]: `s_i − s_j ≥ 0.1` under
//! plain floating-point comparison. Near-ties carry no ordering signal and
//! would otherwise drown the loss in noise. With no qualifying pairs the
//! fine loss is zero.
//!
//! Losses are computed on logits with the stable `softplus` forms, so
//! saturated predictions cost neither overflow nor precision.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::math::{dot, sigmoid, softplus};

/// Minimum teacher-label separation for a pair to enter the fine loss.
pub const PREFERENCE_MARGIN: f64 = 0.1;

#[derive(Debug, Error)]
pub enum RelevanceError {
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("length mismatch: {0}")]
    Alignment(String),
    #[error("invalid label: {0}")]
    InvalidLabel(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// A relevance verdict: the raw logit and its sigmoid.
///
/// The score stays strictly inside `(0, 1)` for all logits that arise in
/// practice; only astronomically large magnitudes saturate to the floating
/// point endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevanceJudgment {
    pub logit: f64,
    pub score: f64,
}

impl RelevanceJudgment {
    pub fn from_logit(logit: f64) -> Self {
        Self { logit, score: sigmoid(logit) }
    }

    /// Inverse construction for tests and replay; the score must lie
    /// strictly inside `(0, 1)`.
    pub fn from_score(score: f64) -> Result<Self, RelevanceError> {
        if !score.is_finite() || score <= 0.0 || score >= 1.0 {
            return Err(RelevanceError::InvalidLabel(format!(
                "score {score} not strictly inside (0, 1)"
            )));
        }
        Ok(Self { logit: (score / (1.0 - score)).ln(), score })
    }
}

/// Applies the assessment probe `(w, b)` to a relevance embedding.
pub fn assess(w: &[f64], bias: f64, v_rel: &[f64]) -> Result<RelevanceJudgment, RelevanceError> {
    if w.len() != v_rel.len() {
        return Err(RelevanceError::Dimension(format!(
            "probe width {} vs embedding width {}",
            w.len(),
            v_rel.len()
        )));
    }
    if v_rel.is_empty() {
        return Err(RelevanceError::Empty("relevance embedding"));
    }
    Ok(RelevanceJudgment::from_logit(dot(w, v_rel) + bias))
}

/// An ordered preference between two documents of the same query:
/// `preferred` carries a teacher label at least [`PREFERENCE_MARGIN`] above
/// `other`'s. Only [`preference_pairs`] constructs these, so the invariant
/// holds by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferencePair {
    pub preferred: usize,
    pub other: usize,
    pub preferred_label: f64,
    pub other_label: f64,
}

/// Enumerates qualifying ordered pairs `(i, j)` with
/// `label[i] − label[j] ≥ PREFERENCE_MARGIN`, in row-major index order.
/// Labels must be finite values in `[0, 1]`.
pub fn preference_pairs(label_scores: &[f64]) -> Result<Vec<PreferencePair>, RelevanceError> {
    for &s in label_scores {
        if !s.is_finite() || !(0.0..=1.0).contains(&s) {
            return Err(RelevanceError::InvalidLabel(format!(
                "teacher label {s} outside [0, 1]"
            )));
        }
    }
    let mut pairs = Vec::new();
    for (i, &si) in label_scores.iter().enumerate() {
        for (j, &sj) in label_scores.iter().enumerate() {
            if i != j && si - sj >= PREFERENCE_MARGIN {
                pairs.push(PreferencePair {
                    preferred: i,
                    other: j,
                    preferred_label: si,
                    other_label: sj,
                });
            }
        }
    }
    Ok(pairs)
}

fn check_alignment(judgments: usize, labels: usize, what: &str) -> Result<(), RelevanceError> {
    if judgments != labels {
        return Err(RelevanceError::Alignment(format!(
            "{judgments} judgments vs {labels} {what}"
        )));
    }
    Ok(())
}

/// Mean binary cross-entropy between assessed scores and hard labels,
/// computed on logits: `softplus(z) − y·z` per item.
pub fn coarse_loss(judgments: &[RelevanceJudgment], labels: &[u8]) -> Result<f64, RelevanceError> {
    Ok(coarse_loss_grad(judgments, labels)?.0)
}

/// [`coarse_loss`] plus `∂L/∂z_i = (σ(z_i) − y_i) / n`.
pub fn coarse_loss_grad(
    judgments: &[RelevanceJudgment],
    labels: &[u8],
) -> Result<(f64, Vec<f64>), RelevanceError> {
    if judgments.is_empty() {
        return Err(RelevanceError::Empty("coarse loss needs at least one judgment"));
    }
    check_alignment(judgments.len(), labels.len(), "labels")?;
    let n = judgments.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(judgments.len());
    for (j, &y) in judgments.iter().zip(labels) {
        if y > 1 {
            return Err(RelevanceError::InvalidLabel(format!("binary label {y} not in {{0,1}}")));
        }
        let yf = y as f64;
        loss += softplus(j.logit) - yf * j.logit;
        grad.push((j.score - yf) / n);
    }
    Ok((loss / n, grad))
}

/// Mean pairwise ranking loss `−ln σ(z_i − z_j)` over qualifying pairs.
/// Zero when no pair qualifies.
pub fn fine_loss(
    judgments: &[RelevanceJudgment],
    label_scores: &[f64],
) -> Result<f64, RelevanceError> {
    Ok(fine_loss_grad(judgments, label_scores)?.0)
}

/// [`fine_loss`] plus its gradient w.r.t. each logit.
pub fn fine_loss_grad(
    judgments: &[RelevanceJudgment],
    label_scores: &[f64],
) -> Result<(f64, Vec<f64>), RelevanceError> {
    if judgments.is_empty() {
        return Err(RelevanceError::Empty("fine loss needs at least one judgment"));
    }
    check_alignment(judgments.len(), label_scores.len(), "teacher labels")?;
    let pairs = preference_pairs(label_scores)?;
    let mut grad = vec![0.0; judgments.len()];
    if pairs.is_empty() {
        return Ok((0.0, grad));
    }
    let np = pairs.len() as f64;
    let mut loss = 0.0;
    for pair in &pairs {
        let margin = judgments[pair.preferred].logit - judgments[pair.other].logit;
        loss += softplus(-margin);
        let slack = (sigmoid(margin) - 1.0) / np; // −(1−σ)/np
        grad[pair.preferred] += slack;
        grad[pair.other] -= slack;
    }
    Ok((loss / np, grad))
}

/// The combined assessment objective: coarse + fine.
pub fn bi_granularity_loss(
    judgments: &[RelevanceJudgment],
    labels: &[u8],
    label_scores: &[f64],
) -> Result<f64, RelevanceError> {
    Ok(coarse_loss(judgments, labels)? + fine_loss(judgments, label_scores)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn assess_is_the_documented_affine_sigmoid() {
        let j = assess(&[1.0, -2.0, 0.5], 0.25, &[2.0, 1.0, 4.0]).unwrap();
        assert_relative_eq!(j.logit, 2.0 - 2.0 + 2.0 + 0.25);
        assert_relative_eq!(j.score, sigmoid(2.25));
    }

    #[test]
    fn large_bias_saturates_the_score() {
        let j = assess(&[0.0, 0.0], 20.0, &[5.0, -5.0]).unwrap();
        assert!(j.score > 0.999999, "σ(20) = {}", j.score);
    }

    #[test]
    fn assess_rejects_mismatched_widths() {
        assert!(assess(&[1.0, 2.0], 0.0, &[1.0]).is_err());
        assert!(assess(&[], 0.0, &[]).is_err());
    }

    #[test]
    fn coarse_loss_single_confident_item() {
        // s = 0.9 against y = 1 costs −ln 0.9.
        let j = RelevanceJudgment::from_score(0.9).unwrap();
        let loss = coarse_loss(&[j], &[1]).unwrap();
        assert_relative_eq!(loss, -(0.9f64.ln()), epsilon = 1e-12);
        assert_relative_eq!(loss, 0.10536051565782628, epsilon = 1e-12);
    }

    #[test]
    fn coarse_loss_vanishes_as_score_approaches_label() {
        let j = RelevanceJudgment::from_score(1.0 - 1e-9).unwrap();
        assert!(coarse_loss(&[j], &[1]).unwrap() < 1e-8);
        let j = RelevanceJudgment::from_score(1e-9).unwrap();
        assert!(coarse_loss(&[j], &[0]).unwrap() < 1e-8);
    }

    #[test]
    fn coarse_loss_validates_inputs() {
        let j = RelevanceJudgment::from_logit(0.0);
        assert!(coarse_loss(&[], &[]).is_err());
        assert!(coarse_loss(&[j], &[1, 0]).is_err());
        assert!(coarse_loss(&[j], &[2]).is_err());
    }

    #[test]
    fn preference_pairs_apply_the_margin_strictly() {
        // 0.95 vs 0.90 is below the margin; both beat 0.20.
        let pairs = preference_pairs(&[0.95, 0.90, 0.20]).unwrap();
        let index_pairs: Vec<_> = pairs.iter().map(|p| (p.preferred, p.other)).collect();
        assert_eq!(index_pairs, vec![(0, 2), (1, 2)]);
        for p in &pairs {
            assert!(p.preferred_label - p.other_label >= PREFERENCE_MARGIN);
        }
        assert!(preference_pairs(&[0.5, 1.5]).is_err());
    }

    #[test]
    fn fine_loss_equal_logits_cost_ln2_per_pair() {
        let j = [RelevanceJudgment::from_logit(0.4); 3];
        let loss = fine_loss(&j, &[0.95, 0.90, 0.20]).unwrap();
        assert_relative_eq!(loss, 2.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn fine_loss_without_qualifying_pairs_is_zero() {
        let j = [RelevanceJudgment::from_logit(1.0), RelevanceJudgment::from_logit(-1.0)];
        assert_eq!(fine_loss(&j, &[0.55, 0.50]).unwrap(), 0.0);
        let single = [RelevanceJudgment::from_logit(1.0)];
        assert_eq!(fine_loss(&single, &[0.9]).unwrap(), 0.0);
    }

    #[test]
    fn bi_granularity_is_the_sum_of_its_parts() {
        let j = [
            RelevanceJudgment::from_score(0.9).unwrap(),
            RelevanceJudgment::from_score(0.4).unwrap(),
        ];
        let labels = [1, 0];
        let teacher = [0.95, 0.20];
        let coarse = coarse_loss(&j, &labels).unwrap();
        let fine = fine_loss(&j, &teacher).unwrap();
        let total = bi_granularity_loss(&j, &labels, &teacher).unwrap();
        assert_eq!(total, coarse + fine);
        // Numeric anchor: −ln 0.9 ≈ 0.1054 coarse alone, ln 2 ≈ 0.6931 fine
        // alone, summing near 0.7985 when composed from those components.
        assert_relative_eq!(
            -(0.9f64.ln()) + 2.0f64.ln(),
            0.7985076962177715,
            epsilon = 1e-12
        );
    }

    #[test]
    fn saturated_correct_predictions_cost_almost_nothing() {
        let j = [RelevanceJudgment::from_logit(20.0), RelevanceJudgment::from_logit(-20.0)];
        let total = bi_granularity_loss(&j, &[1, 0], &[1.0, 0.0]).unwrap();
        assert!(total < 1e-6, "saturated loss was {total}");
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let logits = [0.7, -0.3, 1.9, 0.2];
        let labels = [1u8, 0, 0, 1];
        let teacher = [0.95, 0.10, 0.55, 0.80];
        let judge =
            |z: &[f64]| z.iter().map(|&l| RelevanceJudgment::from_logit(l)).collect::<Vec<_>>();

        let (_, cg) = coarse_loss_grad(&judge(&logits), &labels).unwrap();
        let (_, fg) = fine_loss_grad(&judge(&logits), &teacher).unwrap();
        let h = 1e-6;
        for i in 0..logits.len() {
            let mut up = logits;
            let mut down = logits;
            up[i] += h;
            down[i] -= h;
            let fd = (coarse_loss(&judge(&up), &labels).unwrap()
                - coarse_loss(&judge(&down), &labels).unwrap())
                / (2.0 * h);
            assert_relative_eq!(cg[i], fd, epsilon = 1e-9);
            let fd = (fine_loss(&judge(&up), &teacher).unwrap()
                - fine_loss(&judge(&down), &teacher).unwrap())
                / (2.0 * h);
            assert_relative_eq!(fg[i], fd, epsilon = 1e-9);
        }
    }

    proptest! {
        /// Reordering documents must not change either loss value: both are
        /// means over items/pairs, not order-sensitive reductions.
        #[test]
        fn losses_are_permutation_invariant(
            items in proptest::collection::vec((-4.0f64..4.0, 0u8..2, 0.0f64..1.0), 2..8),
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let judgments: Vec<_> =
                items.iter().map(|(z, _, _)| RelevanceJudgment::from_logit(*z)).collect();
            let labels: Vec<u8> = items.iter().map(|(_, y, _)| *y).collect();
            let teacher: Vec<f64> = items.iter().map(|(_, _, t)| *t).collect();
            let base_c = coarse_loss(&judgments, &labels).unwrap();
            let base_f = fine_loss(&judgments, &teacher).unwrap();

            let mut order: Vec<usize> = (0..items.len()).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let j2: Vec<_> = order.iter().map(|&i| judgments[i]).collect();
            let l2: Vec<u8> = order.iter().map(|&i| labels[i]).collect();
            let t2: Vec<f64> = order.iter().map(|&i| teacher[i]).collect();
            prop_assert!((coarse_loss(&j2, &l2).unwrap() - base_c).abs() < 1e-12);
            prop_assert!((fine_loss(&j2, &t2).unwrap() - base_f).abs() < 1e-12);
        }

        /// Every qualifying pair honors the margin, and none is duplicated.
        #[test]
        fn preference_pairs_honor_margin(labels in proptest::collection::vec(0.0f64..1.0, 0..10)) {
            let pairs = preference_pairs(&labels).unwrap();
            let mut seen = std::collections::HashSet::new();
            for p in &pairs {
                prop_assert!(labels[p.preferred] - labels[p.other] >= PREFERENCE_MARGIN);
                prop_assert!(seen.insert((p.preferred, p.other)));
            }
            // Completeness: any pair meeting the margin is present.
            for i in 0..labels.len() {
                for j in 0..labels.len() {
                    if i != j && labels[i] - labels[j] >= PREFERENCE_MARGIN {
                        prop_assert!(seen.contains(&(i, j)));
                    }
                }
            }
        }
    }
}
