//! Refined hard-negative sampling.
//!
//! Negatives are drawn proportionally to a piecewise Gaussian in the gap
//! between a candidate's oracle score `s_i` and the positive's score `s⁺`:
//!
//! ```text
//! w(s_i) = exp(−a·(s_i − s⁺ − b)²)        if s_i <  s⁺ − b
//!          exp(−a·k·(s_i − s⁺ − b)²)      otherwise
//! ```
//!
//! Weight mass concentrates just below the positive — candidates that look
//! deceptively relevant — while `k ≥ 1` steepens the decay on the high side
//! to suppress likely false negatives. The branch split is implemented
//! exactly as written, including its discontinuity at `s_i = s⁺ − b` for
//! `k ≠ 1`; see the crate notes on fidelity to the printed form.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, ScoredDocument};
use crate::Token;

/// Hyperparameters of the negative sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerParams {
    /// Sharpness of the Gaussian, `> 0`.
    pub a: f64,
    /// Offset of the peak relative to the positive's score.
    pub b: f64,
    /// Decay scaler for candidates at or above `s⁺ − b`, `≥ 1`.
    pub k: f64,
    /// Negatives drawn per query, `≥ 1`.
    pub n_neg: usize,
    /// Seed for the draw stream.
    pub seed: u64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self { a: 10.0, b: 0.1, k: 4.0, n_neg: 1, seed: 0 }
    }
}

impl SamplerParams {
    pub fn validate(&self) -> Result<(), DataError> {
        if !self.a.is_finite() || self.a <= 0.0 {
            return Err(DataError::Config(format!("sampler sharpness a = {} must be > 0", self.a)));
        }
        if !self.b.is_finite() {
            return Err(DataError::Config("sampler offset b must be finite".into()));
        }
        if !self.k.is_finite() || self.k < 1.0 {
            return Err(DataError::Config(format!("sampler decay k = {} must be ≥ 1", self.k)));
        }
        if self.n_neg == 0 {
            return Err(DataError::Config("n_neg must be positive".into()));
        }
        Ok(())
    }
}

/// The branchwise sampling weight; always strictly positive.
pub fn sampling_weight(s_i: f64, s_plus: f64, params: &SamplerParams) -> f64 {
    let gap = s_i - s_plus - params.b;
    if s_i < s_plus - params.b {
        (-params.a * gap * gap).exp()
    } else {
        (-params.a * params.k * gap * gap).exp()
    }
}

/// Result of [`sample_negatives`]: drawn documents plus a flag noting when
/// the request exceeded the pool and was capped.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledNegatives {
    pub docs: Vec<ScoredDocument>,
    pub truncated: bool,
}

/// Draws `params.n_neg` negatives without replacement, proportionally to
/// [`sampling_weight`] against the positive's score `s_plus`, from the
/// seeded stream `params.seed`. Candidates are `(tokens, oracle score)`
/// pairs of known-irrelevant documents; drawn documents carry `y = 0` and
/// the teacher label `s_ce / 2`.
pub fn sample_negatives(
    candidates: &[(Vec<Token>, f64)],
    s_plus: f64,
    params: &SamplerParams,
) -> Result<SampledNegatives, DataError> {
    params.validate()?;
    if candidates.is_empty() {
        return Err(DataError::Domain("negative sampling needs at least one candidate".into()));
    }
    for (name, v) in std::iter::once(("s_plus", s_plus))
        .chain(candidates.iter().map(|(_, s)| ("candidate score", *s)))
    {
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(DataError::Domain(format!("{name} = {v} outside [0, 1]")));
        }
    }

    let truncated = params.n_neg > candidates.len();
    let n = params.n_neg.min(candidates.len());
    let mut weights: Vec<f64> =
        candidates.iter().map(|(_, s)| sampling_weight(*s, s_plus, params)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut docs = Vec::with_capacity(n);
    for _ in 0..n {
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        // Cumulative walk; the fallback to the last live index absorbs
        // floating-point shortfall at u ≈ total.
        let mut chosen = None;
        for (i, w) in weights.iter().enumerate() {
            if *w == 0.0 {
                continue; // already drawn
            }
            u -= w;
            chosen = Some(i);
            if u < 0.0 {
                break;
            }
        }
        let i = chosen.expect("live candidate remains");
        let (tokens, s_ce) = &candidates[i];
        docs.push(ScoredDocument {
            tokens: tokens.clone(),
            y: 0,
            s_ce: *s_ce,
            s_rel_label: *s_ce / 2.0,
        });
        weights[i] = 0.0;
    }
    Ok(SampledNegatives { docs, truncated })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_follows_the_printed_branches() {
        let p = SamplerParams::default();
        // At s_i = s⁺ + b the exponent vanishes on the second branch.
        assert_eq!(sampling_weight(1.0, 0.9, &p), 1.0);
        // Hand-evaluated low-side case: exp(−10·(0.5 − 0.9 − 0.1)²) = exp(−2.5).
        let w = sampling_weight(0.5, 0.9, &p);
        assert!((w - (-2.5f64).exp()).abs() < 1e-15);
        assert!((w - 0.0820849986238988).abs() < 1e-12);
        // k = 1 collapses both branches into one Gaussian.
        let p1 = SamplerParams { k: 1.0, ..p };
        for s_i in [0.0, 0.3, 0.7999, 0.8, 0.95, 1.0] {
            let gap: f64 = s_i - 0.9 - 0.1;
            assert_eq!(sampling_weight(s_i, 0.9, &p1), (-10.0 * gap * gap).exp());
        }
    }

    #[test]
    fn high_side_is_suppressed_when_k_exceeds_one() {
        let p = SamplerParams::default();
        let relaxed = SamplerParams { k: 1.0, ..p };
        // Everything at or above s⁺ − b with a nonzero exponent argument gets
        // strictly less weight than the single-Gaussian form.
        for s_i in [0.80, 0.85, 0.9, 0.95, 1.0] {
            let (w, w1) = (sampling_weight(s_i, 0.9, &p), sampling_weight(s_i, 0.9, &relaxed));
            if s_i == 1.0 {
                assert_eq!(w, w1, "zero exponent argument is branch-independent");
            } else {
                assert!(w < w1, "s_i = {s_i}: {w} !< {w1}");
            }
        }
    }

    #[test]
    fn weight_is_strictly_positive_on_the_whole_domain() {
        let p = SamplerParams::default();
        let mut s = 0.0;
        while s <= 1.0 {
            assert!(sampling_weight(s, 0.9, &p) > 0.0);
            s += 0.001;
        }
    }

    fn pool(scores: &[f64]) -> Vec<(Vec<Token>, f64)> {
        scores.iter().enumerate().map(|(i, &s)| (vec![100 + i as Token], s)).collect()
    }

    #[test]
    fn single_candidate_is_always_selected() {
        let p = SamplerParams { n_neg: 1, seed: 7, ..SamplerParams::default() };
        let out = sample_negatives(&pool(&[0.02]), 0.9, &p).unwrap();
        assert_eq!(out.docs.len(), 1);
        assert!(!out.truncated);
        assert_eq!(out.docs[0].tokens, vec![100]);
        assert_eq!(out.docs[0].y, 0);
        assert_eq!(out.docs[0].s_ce, 0.02);
        assert_eq!(out.docs[0].s_rel_label, 0.01);
    }

    #[test]
    fn equal_scores_split_evenly_over_many_seeds() {
        let candidates = pool(&[0.5, 0.5]);
        let mut first = 0usize;
        let draws = 10_000;
        for seed in 0..draws {
            let p = SamplerParams { n_neg: 1, seed, ..SamplerParams::default() };
            let out = sample_negatives(&candidates, 0.9, &p).unwrap();
            if out.docs[0].tokens == vec![100] {
                first += 1;
            }
        }
        let freq = first as f64 / draws as f64;
        assert!((freq - 0.5).abs() < 0.02, "empirical split {freq}");
    }

    #[test]
    fn oversized_requests_cap_with_a_warning_flag() {
        let p = SamplerParams { n_neg: 5, seed: 3, ..SamplerParams::default() };
        let out = sample_negatives(&pool(&[0.1, 0.6, 0.8]), 0.9, &p).unwrap();
        assert_eq!(out.docs.len(), 3);
        assert!(out.truncated);
        // Without replacement: all three distinct.
        let mut firsts: Vec<Token> = out.docs.iter().map(|d| d.tokens[0]).collect();
        firsts.sort_unstable();
        assert_eq!(firsts, vec![100, 101, 102]);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let candidates = pool(&[0.1, 0.4, 0.6, 0.85]);
        let p = SamplerParams { n_neg: 2, seed: 11, ..SamplerParams::default() };
        assert_eq!(
            sample_negatives(&candidates, 0.9, &p).unwrap(),
            sample_negatives(&candidates, 0.9, &p).unwrap()
        );
    }

    #[test]
    fn validates_params_and_candidates() {
        let p = SamplerParams::default();
        assert!(sample_negatives(&[], 0.9, &p).is_err());
        assert!(sample_negatives(&pool(&[1.5]), 0.9, &p).is_err());
        assert!(sample_negatives(&pool(&[0.5]), 1.5, &p).is_err());
        for bad in [
            SamplerParams { a: 0.0, ..p },
            SamplerParams { a: -1.0, ..p },
            SamplerParams { k: 0.5, ..p },
            SamplerParams { n_neg: 0, ..p },
            SamplerParams { b: f64::NAN, ..p },
        ] {
            assert!(bad.validate().is_err(), "{bad:?} should fail validation");
        }
    }
}
