//! The three-stage answering pipeline: assess every retrieved document,
//! generate one guided answer per document, then verify and select.
//!
//! Stage one and two share work: the assessment prefix
//! `[BOS, SEP_DOC, doc, SEP_QUERY, query, ASSESS]` is a strict prefix of the
//! generation input, so the engine prefows it once, reads the relevance
//! score off the last hidden state, and continues decoding from the GUIDE
//! position over the same key/value cache — one prefix pass per document
//! instead of two. Cached and uncached paths run the same per-position
//! kernel, so their outputs are identical, not merely close; the engine
//! counts prefix passes so tests can pin the efficiency claim.
//!
//! Verification offers two strategies: **source reliability** trusts the
//! assessed score alone; **knowledge consistency** additionally scores each
//! drafted answer with guidance forced to zero — "answer as if the document
//! were irrelevant" — and blends the resulting inverse perplexity with the
//! relevance score.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{fit_document, ModelError, SequenceLayout, TinyLm};
use crate::Token;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("invalid argument: {0}")]
    Domain(String),
    #[error("candidate for document {0} has no consistency score; run verification first")]
    MissingConsistency(usize),
    #[error("cache equivalence violated: {0}")]
    Internal(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Answer-selection strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Pick the answer whose document got the highest relevance score.
    SourceReliability,
    /// Blend relevance with the inverse perplexity of the drafted answer
    /// under zeroed guidance.
    KnowledgeConsistency,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "source_reliability" => Ok(Self::SourceReliability),
            "knowledge_consistency" => Ok(Self::KnowledgeConsistency),
            other => Err(format!(
                "unknown strategy {other:?}; expected source_reliability or knowledge_consistency"
            )),
        }
    }
}

/// Which strategy to select with, and the blend weight for the consistency
/// term: `combined = λ·c + (1−λ)·s_rel`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerificationPolicy {
    pub strategy: Strategy,
    pub lambda: f64,
}

impl Default for VerificationPolicy {
    fn default() -> Self {
        Self { strategy: Strategy::SourceReliability, lambda: 0.5 }
    }
}

impl VerificationPolicy {
    pub fn validate(&self) -> Result<(), InferenceError> {
        if !self.lambda.is_finite() || !(0.0..=1.0).contains(&self.lambda) {
            return Err(InferenceError::Domain(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// One document's draft: its answer, the assessed relevance, and (after
/// verification) the consistency and blended scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerCandidate {
    pub doc_index: usize,
    pub answer: Vec<Token>,
    pub s_rel: f64,
    pub consistency: Option<f64>,
    pub combined: Option<f64>,
}

/// Attestation returned by [`InferenceEngine::answer_with_cache_reuse`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EquivalenceWitness {
    /// Whether the uncached path was actually re-run and compared.
    pub verified: bool,
    pub cached_prefix_passes: usize,
    pub uncached_prefix_passes: usize,
}

/// Per-query inference output: the line-delimited contract consumed by
/// evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub query_id: u64,
    pub selected_answer_tokens: Vec<Token>,
    pub selected_doc_index: usize,
    pub per_document: Vec<PerDocumentRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerDocumentRecord {
    pub s_rel: f64,
    pub c: Option<f64>,
    pub combined: Option<f64>,
    pub answer_tokens: Vec<Token>,
}

/// Inverse perplexity of `answer` (plus its closing EOS) given the document
/// presented as irrelevant: `c = exp(mean log p(a_t | q, d, ŝ = 0))`.
/// Always in `(0, 1]`, with 1 meaning the model would have said exactly this
/// without trusting the document.
pub fn consistency(
    model: &TinyLm,
    answer: &[Token],
    query: &[Token],
    doc: &[Token],
) -> Result<f64, InferenceError> {
    if answer.is_empty() {
        return Err(InferenceError::Domain("consistency needs a non-empty answer".into()));
    }
    let (lp, n) = model.sequence_log_prob(answer, query, doc, 0.0)?;
    Ok((lp / n as f64).exp())
}

/// Index of the winning candidate under `policy`. Source reliability ranks
/// by `s_rel`; knowledge consistency by `λ·c + (1−λ)·s_rel` (requiring
/// consistency to be populated). Ties break toward the lowest document
/// index. At `λ = 0` the blend reduces to `s_rel` exactly, so both
/// strategies select identically.
pub fn select(
    candidates: &[AnswerCandidate],
    policy: &VerificationPolicy,
) -> Result<usize, InferenceError> {
    if candidates.is_empty() {
        return Err(InferenceError::Domain("cannot select from zero candidates".into()));
    }
    policy.validate()?;
    let score = |c: &AnswerCandidate| -> Result<f64, InferenceError> {
        if !c.s_rel.is_finite() {
            return Err(InferenceError::Domain(format!(
                "candidate {} has non-finite s_rel",
                c.doc_index
            )));
        }
        match policy.strategy {
            Strategy::SourceReliability => Ok(c.s_rel),
            Strategy::KnowledgeConsistency => {
                let cc = c
                    .consistency
                    .ok_or(InferenceError::MissingConsistency(c.doc_index))?;
                Ok(policy.lambda * cc + (1.0 - policy.lambda) * c.s_rel)
            }
        }
    };
    let mut best = 0;
    let mut best_score = score(&candidates[0])?;
    for (i, candidate) in candidates.iter().enumerate().skip(1) {
        let s = score(candidate)?;
        if s > best_score
            || (s == best_score && candidate.doc_index < candidates[best].doc_index)
        {
            best = i;
            best_score = s;
        }
    }
    Ok(best)
}

/// Drives assessment, guided generation, verification, and selection for one
/// query at a time. Holds the instrumentation for the cache-reuse claim: a
/// counter of assessment/generation prefix passes (consistency scoring is
/// accounted separately and never enters this counter).
#[derive(Debug)]
pub struct InferenceEngine<'m> {
    model: &'m TinyLm,
    max_docs: usize,
    max_new_tokens: usize,
    cache_reuse: bool,
    prefix_passes: usize,
}

impl<'m> InferenceEngine<'m> {
    pub fn new(
        model: &'m TinyLm,
        max_docs: usize,
        max_new_tokens: usize,
    ) -> Result<Self, InferenceError> {
        if max_docs == 0 {
            return Err(InferenceError::Domain("max_docs must be positive".into()));
        }
        if max_new_tokens == 0 {
            return Err(InferenceError::Domain("max_new_tokens must be positive".into()));
        }
        Ok(Self { model, max_docs, max_new_tokens, cache_reuse: true, prefix_passes: 0 })
    }

    /// Disables (or re-enables) prefix reuse; output tokens are identical
    /// either way, only the pass count changes.
    pub fn with_cache_reuse(mut self, on: bool) -> Self {
        self.cache_reuse = on;
        self
    }

    /// Assessment/generation prefix passes since construction or
    /// [`InferenceEngine::reset_passes`].
    pub fn prefix_passes(&self) -> usize {
        self.prefix_passes
    }

    pub fn reset_passes(&mut self) {
        self.prefix_passes = 0;
    }

    /// Stage one and two for every retrieved document, in input order:
    /// assess, then generate one answer guided by the assessed score.
    /// Consistency fields stay unpopulated until [`InferenceEngine::verify`].
    pub fn answer_all(
        &mut self,
        query: &[Token],
        docs: &[Vec<Token>],
    ) -> Result<Vec<AnswerCandidate>, InferenceError> {
        if docs.is_empty() {
            return Err(InferenceError::Domain("answer_all needs at least one document".into()));
        }
        if docs.len() > self.max_docs {
            return Err(InferenceError::Domain(format!(
                "{} documents exceed the configured maximum {}",
                docs.len(),
                self.max_docs
            )));
        }
        let mut candidates = Vec::with_capacity(docs.len());
        for (doc_index, doc) in docs.iter().enumerate() {
            let (answer, s_rel) = self.assess_and_generate(query, doc)?;
            candidates.push(AnswerCandidate {
                doc_index,
                answer,
                s_rel,
                consistency: None,
                combined: None,
            });
        }
        Ok(candidates)
    }

    /// Stage three bookkeeping: under knowledge consistency, scores every
    /// candidate's answer with guidance forced to zero and fills the
    /// `consistency` and `combined` fields. A no-op under source
    /// reliability. `docs` must be the list `candidates` was produced from.
    pub fn verify(
        &mut self,
        candidates: &mut [AnswerCandidate],
        query: &[Token],
        docs: &[Vec<Token>],
        policy: &VerificationPolicy,
    ) -> Result<(), InferenceError> {
        policy.validate()?;
        if policy.strategy != Strategy::KnowledgeConsistency {
            return Ok(());
        }
        for candidate in candidates.iter_mut() {
            let doc = docs.get(candidate.doc_index).ok_or_else(|| {
                InferenceError::Domain(format!(
                    "candidate references document {} but only {} were given",
                    candidate.doc_index,
                    docs.len()
                ))
            })?;
            let fitted = self.fit(query, doc)?;
            let c = self.consistency_with_empty_fallback(&candidate.answer, query, fitted)?;
            candidate.consistency = Some(c);
            candidate.combined =
                Some(policy.lambda * c + (1.0 - policy.lambda) * candidate.s_rel);
        }
        Ok(())
    }

    /// The full pipeline for one query, producing the record evaluation
    /// consumes.
    pub fn run_query(
        &mut self,
        query_id: u64,
        query: &[Token],
        docs: &[Vec<Token>],
        policy: &VerificationPolicy,
    ) -> Result<InferenceRecord, InferenceError> {
        let mut candidates = self.answer_all(query, docs)?;
        self.verify(&mut candidates, query, docs, policy)?;
        let winner = select(&candidates, policy)?;
        Ok(InferenceRecord {
            query_id,
            selected_answer_tokens: candidates[winner].answer.clone(),
            selected_doc_index: candidates[winner].doc_index,
            per_document: candidates
                .iter()
                .map(|c| PerDocumentRecord {
                    s_rel: c.s_rel,
                    c: c.consistency,
                    combined: c.combined,
                    answer_tokens: c.answer.clone(),
                })
                .collect(),
        })
    }

    /// Single-document assess-and-generate with explicit cache accounting.
    /// With `verify_against_uncached` the no-cache path is re-run and any
    /// divergence — which the shared kernel makes impossible short of a bug —
    /// raises an internal error rather than passing silently.
    pub fn answer_with_cache_reuse(
        &mut self,
        query: &[Token],
        doc: &[Token],
        verify_against_uncached: bool,
    ) -> Result<(Vec<Token>, f64, EquivalenceWitness), InferenceError> {
        let fitted = self.fit(query, doc)?;
        let (answer, s_rel) = self.cached_path(query, fitted)?;
        let mut witness = EquivalenceWitness {
            verified: verify_against_uncached,
            cached_prefix_passes: 1,
            uncached_prefix_passes: 0,
        };
        if verify_against_uncached {
            let (plain_answer, plain_s) = self.uncached_path(query, fitted)?;
            witness.uncached_prefix_passes = 2;
            if plain_answer != answer || plain_s != s_rel {
                return Err(InferenceError::Internal(format!(
                    "cached ({answer:?}, {s_rel}) vs uncached ({plain_answer:?}, {plain_s})"
                )));
            }
        }
        Ok((answer, s_rel, witness))
    }

    fn assess_and_generate(
        &mut self,
        query: &[Token],
        doc: &[Token],
    ) -> Result<(Vec<Token>, f64), InferenceError> {
        let fitted = self.fit(query, doc)?;
        if self.cache_reuse {
            self.cached_path(query, fitted)
        } else {
            self.uncached_path(query, fitted)
        }
    }

    /// Truncates the document so the generation layout, the decoding budget,
    /// and the EOS appended when an answer is later consistency-scored all
    /// fit the model's window; assessment, generation, and verification then
    /// see the same document bytes.
    fn fit<'d>(&self, query: &[Token], doc: &'d [Token]) -> Result<&'d [Token], InferenceError> {
        let (kept, _) = fit_document(self.model.config(), query, doc, self.max_new_tokens + 1)?;
        Ok(kept)
    }

    /// One prefix pass: prefill ends at ASSESS, the relevance score comes off
    /// that hidden state, and decoding continues over the same cache.
    fn cached_path(
        &mut self,
        query: &[Token],
        doc: &[Token],
    ) -> Result<(Vec<Token>, f64), InferenceError> {
        let cfg = self.model.config();
        let layout = SequenceLayout::generation(cfg, query, doc)?;
        let headroom = cfg.max_seq_len - layout.tokens.len();
        if headroom == 0 {
            return Err(InferenceError::Model(ModelError::SequenceTooLong {
                len: layout.tokens.len() + 1,
                max: cfg.max_seq_len,
            }));
        }
        let guide_pos = layout.guide_pos.expect("generation layout has GUIDE");
        let (mut state, v_rel) = self.model.prefill(&layout.tokens[..guide_pos])?;
        self.prefix_passes += 1;
        let judgment = self.model.assess(&v_rel)?;
        let hidden =
            self.model.decode_embedding(&mut state, &self.model.guidance_embed(judgment.score)?)?;
        let answer =
            self.model.greedy_from(&mut state, hidden, self.max_new_tokens.min(headroom));
        Ok((answer, judgment.score))
    }

    /// Two prefix passes: one to assess, one inside generation.
    fn uncached_path(
        &mut self,
        query: &[Token],
        doc: &[Token],
    ) -> Result<(Vec<Token>, f64), InferenceError> {
        let v_rel = self.model.encode_relevance(query, doc)?;
        self.prefix_passes += 1;
        let judgment = self.model.assess(&v_rel)?;
        let answer = self.model.generate(query, doc, judgment.score, self.max_new_tokens)?;
        self.prefix_passes += 1;
        Ok((answer, judgment.score))
    }

    /// Consistency for candidates the engine produced itself. A greedy pass
    /// can legitimately emit an empty answer (EOS first); its consistency is
    /// the EOS probability alone — the `n = 0 answer tokens + 1` case of the
    /// same length-normalized rule, still inside (0, 1].
    fn consistency_with_empty_fallback(
        &self,
        answer: &[Token],
        query: &[Token],
        doc: &[Token],
    ) -> Result<f64, InferenceError> {
        if !answer.is_empty() {
            return consistency(self.model, answer, query, doc);
        }
        let cfg = self.model.config();
        let layout = SequenceLayout::generation(cfg, query, doc)?;
        let guide_pos = layout.guide_pos.expect("generation layout has GUIDE");
        let (mut state, _) = self.model.prefill(&layout.tokens[..guide_pos])?;
        let hidden = self.model.decode_embedding(&mut state, &self.model.guidance_embed(0.0)?)?;
        let logits = self.model.logits_from_hidden(&hidden)?;
        let lp = crate::model::math::log_softmax_at(&logits, cfg.specials.eos as usize);
        Ok(lp.exp())
    }
}
