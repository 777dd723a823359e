//! Sequence layout: how a (document, query, answer) triple becomes one token
//! stream.
//!
//! Every encoded sequence is
//!
//! ```text
//! [BOS, SEP_DOC, doc…, SEP_QUERY, query…, ASSESS]          assessment prefix
//!                                        └→ [GUIDE, answer…, EOS]   continuation
//! ```
//!
//! The document comes **before** the query so the assessment prefix is a
//! strict prefix of the generation input: the decode cache built while
//! scoring relevance can be extended into answer generation without
//! recomputation. The hidden state at `ASSESS` is the relevance embedding;
//! the position after it, `GUIDE`, carries an injected embedding (not a
//! token lookup) that conditions generation on the assessed score.
//!
//! Builders here never truncate: an oversized sequence is an error, and the
//! caller shortens the document first via [`fit_document`] — from the right,
//! queries and answers are never cut — so that assessment and generation are
//! guaranteed to see the same document bytes.

use super::{ModelConfig, ModelError};
use crate::Token;

/// A materialized token stream plus the structural positions other modules
/// need to find.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceLayout {
    pub tokens: Vec<Token>,
    /// Index of the ASSESS token; the hidden state here is the relevance
    /// embedding.
    pub assess_pos: usize,
    /// Index of the GUIDE position when the layout extends into generation.
    pub guide_pos: Option<usize>,
    /// Index of the first answer token when the layout carries a teacher
    /// answer (training); the answer is followed by EOS.
    pub answer_start: Option<usize>,
}

impl SequenceLayout {
    /// Prefix for relevance assessment only: `[BOS, SEP_DOC, doc, SEP_QUERY,
    /// query, ASSESS]`.
    pub fn assessment(cfg: &ModelConfig, query: &[Token], doc: &[Token]) -> Result<Self, ModelError> {
        Self::build(cfg, query, doc, None)
    }

    /// Prefix extended with the GUIDE position, ready for free decoding.
    pub fn generation(cfg: &ModelConfig, query: &[Token], doc: &[Token]) -> Result<Self, ModelError> {
        Self::build(cfg, query, doc, Some(&[]))
    }

    /// Full teacher-forced sequence `…ASSESS, GUIDE, answer, EOS` used by
    /// training and by answer scoring.
    pub fn guided(
        cfg: &ModelConfig,
        query: &[Token],
        doc: &[Token],
        answer: &[Token],
    ) -> Result<Self, ModelError> {
        if answer.is_empty() {
            return Err(ModelError::InvalidContent("answer must be non-empty".into()));
        }
        Self::build(cfg, query, doc, Some(answer))
    }

    fn build(
        cfg: &ModelConfig,
        query: &[Token],
        doc: &[Token],
        continuation: Option<&[Token]>,
    ) -> Result<Self, ModelError> {
        if query.is_empty() {
            return Err(ModelError::InvalidContent("query must be non-empty".into()));
        }
        check_content(cfg, "query", query)?;
        check_content(cfg, "document", doc)?;
        if let Some(answer) = continuation {
            check_content(cfg, "answer", answer)?;
        }

        let s = &cfg.specials;
        let mut tokens = Vec::with_capacity(
            4 + doc.len() + query.len() + continuation.map_or(0, |a| 2 + a.len()),
        );
        tokens.push(s.bos);
        tokens.push(s.sep_doc);
        tokens.extend_from_slice(doc);
        tokens.push(s.sep_query);
        tokens.extend_from_slice(query);
        tokens.push(s.assess);
        let assess_pos = tokens.len() - 1;

        let (guide_pos, answer_start) = match continuation {
            None => (None, None),
            Some(answer) => {
                tokens.push(s.guide);
                let guide_pos = tokens.len() - 1;
                let answer_start = (!answer.is_empty()).then(|| {
                    tokens.extend_from_slice(answer);
                    tokens.push(s.eos);
                    guide_pos + 1
                });
                (Some(guide_pos), answer_start)
            }
        };

        if tokens.len() > cfg.max_seq_len {
            return Err(ModelError::SequenceTooLong { len: tokens.len(), max: cfg.max_seq_len });
        }
        Ok(Self { tokens, assess_pos, guide_pos, answer_start })
    }
}

/// Rejects content containing reserved ids or ids beyond the vocabulary —
/// either would break the "exactly one ASSESS / GUIDE position" invariant or
/// index out of the embedding table.
pub fn check_content(cfg: &ModelConfig, role: &str, tokens: &[Token]) -> Result<(), ModelError> {
    for &t in tokens {
        if t as usize >= cfg.vocab_size {
            return Err(ModelError::InvalidContent(format!(
                "{role} token {t} out of range for vocab_size {}",
                cfg.vocab_size
            )));
        }
        if cfg.specials.contains(t) {
            return Err(ModelError::InvalidContent(format!(
                "{role} contains reserved token {t}"
            )));
        }
    }
    Ok(())
}

/// Shortens `doc` from the right so the full layout — prefix, GUIDE, and
/// `reserve` further positions (answer budget plus EOS) — fits
/// `cfg.max_seq_len`. Returns the kept prefix of the document and whether
/// anything was cut. Errors when even an empty document cannot fit, since
/// queries are never truncated.
pub fn fit_document<'d>(
    cfg: &ModelConfig,
    query: &[Token],
    doc: &'d [Token],
    reserve: usize,
) -> Result<(&'d [Token], bool), ModelError> {
    // BOS + SEP_DOC + SEP_QUERY + ASSESS + GUIDE = 5 structural tokens.
    let fixed = 5 + query.len() + reserve;
    if fixed > cfg.max_seq_len {
        return Err(ModelError::SequenceTooLong { len: fixed + doc.len(), max: cfg.max_seq_len });
    }
    let budget = cfg.max_seq_len - fixed;
    if doc.len() <= budget {
        Ok((doc, false))
    } else {
        Ok((&doc[..budget], true))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig::default()
    }

    #[test]
    fn assessment_layout_has_documented_shape() {
        let cfg = cfg();
        let q = [100, 101];
        let d = [200, 201, 202];
        let layout = SequenceLayout::assessment(&cfg, &q, &d).unwrap();
        let s = &cfg.specials;
        assert_eq!(
            layout.tokens,
            vec![s.bos, s.sep_doc, 200, 201, 202, s.sep_query, 100, 101, s.assess]
        );
        assert_eq!(layout.assess_pos, 8);
        assert_eq!(layout.guide_pos, None);
    }

    #[test]
    fn guided_layout_extends_the_assessment_prefix_exactly() {
        let cfg = cfg();
        let q = [100, 101];
        let d = [200, 201];
        let prefix = SequenceLayout::assessment(&cfg, &q, &d).unwrap();
        let full = SequenceLayout::guided(&cfg, &q, &d, &[300, 301]).unwrap();
        assert_eq!(&full.tokens[..prefix.tokens.len()], prefix.tokens.as_slice());
        assert_eq!(full.guide_pos, Some(prefix.tokens.len()));
        assert_eq!(full.answer_start, Some(prefix.tokens.len() + 1));
        assert_eq!(*full.tokens.last().unwrap(), cfg.specials.eos);
        // Exactly one ASSESS and one GUIDE.
        let count = |t| full.tokens.iter().filter(|&&x| x == t).count();
        assert_eq!(count(cfg.specials.assess), 1);
        assert_eq!(count(cfg.specials.guide), 1);
    }

    #[test]
    fn rejects_reserved_ids_in_content() {
        let cfg = cfg();
        let err = SequenceLayout::assessment(&cfg, &[cfg.specials.assess], &[]).unwrap_err();
        assert!(matches!(err, ModelError::InvalidContent(_)), "{err}");
        let err = SequenceLayout::assessment(&cfg, &[100], &[9999]).unwrap_err();
        assert!(matches!(err, ModelError::InvalidContent(_)), "{err}");
    }

    #[test]
    fn rejects_empty_query_and_empty_answer() {
        let cfg = cfg();
        assert!(SequenceLayout::assessment(&cfg, &[], &[200]).is_err());
        assert!(SequenceLayout::guided(&cfg, &[100], &[200], &[]).is_err());
    }

    #[test]
    fn oversized_sequences_error_rather_than_truncate() {
        let cfg = cfg();
        let doc: Vec<Token> = vec![200; cfg.max_seq_len];
        let err = SequenceLayout::assessment(&cfg, &[100], &doc).unwrap_err();
        assert!(matches!(err, ModelError::SequenceTooLong { .. }), "{err}");
    }

    #[test]
    fn fit_document_cuts_from_the_right_only_as_needed() {
        let cfg = cfg();
        let q = [100, 101];
        let doc: Vec<Token> = (0..300).map(|i| 100 + (i % 50) as Token).collect();
        let (kept, truncated) = fit_document(&cfg, &q, &doc, 10).unwrap();
        assert!(truncated);
        assert_eq!(kept, &doc[..kept.len()]);
        // The resulting guided layout must fit with the reserve intact.
        let layout = SequenceLayout::generation(&cfg, &q, kept).unwrap();
        assert!(layout.tokens.len() + 10 <= cfg.max_seq_len);
        // With the reserve removed, nothing more would fit (cut is minimal).
        assert_eq!(layout.tokens.len() + 10, cfg.max_seq_len);

        let (kept, truncated) = fit_document(&cfg, &q, &doc[..8], 10).unwrap();
        assert_eq!(kept.len(), 8);
        assert!(!truncated);
    }

    #[test]
    fn fit_document_errors_when_query_alone_overflows() {
        let cfg = cfg();
        let q: Vec<Token> = vec![100; cfg.max_seq_len];
        assert!(fit_document(&cfg, &q, &[200], 0).is_err());
    }
}
