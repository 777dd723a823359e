//! Model hyperparameters and the reserved token ids the sequence layout is
//! built from.

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::Token;

/// Reserved token ids with fixed structural roles.
///
/// `PAD` is reserved for alignment in serialized artifacts and never enters
/// the model; the other six appear in every encoded sequence. Content tokens
/// (queries, documents, answers) must avoid all seven — the layout invariant
/// "exactly one ASSESS position" would otherwise be unenforceable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub pad: Token,
    pub bos: Token,
    pub eos: Token,
    pub sep_doc: Token,
    pub sep_query: Token,
    pub assess: Token,
    pub guide: Token,
}

impl Default for SpecialTokens {
    fn default() -> Self {
        Self { pad: 0, bos: 1, eos: 2, sep_doc: 3, sep_query: 4, assess: 5, guide: 6 }
    }
}

impl SpecialTokens {
    /// All reserved ids, in declaration order.
    pub fn all(&self) -> [Token; 7] {
        [self.pad, self.bos, self.eos, self.sep_doc, self.sep_query, self.assess, self.guide]
    }

    /// Whether `token` is one of the reserved ids.
    pub fn contains(&self, token: Token) -> bool {
        self.all().contains(&token)
    }

    /// Largest reserved id; content vocabularies start above it.
    pub fn max_id(&self) -> Token {
        self.all().into_iter().max().expect("non-empty")
    }
}

/// Architecture of the tiny decoder-only transformer.
///
/// Pre-norm blocks with RMS normalization, multi-head causal attention
/// without projection biases, a SiLU MLP with hidden width `4 * d_model`,
/// learned absolute position embeddings, and an untied output projection.
/// On top of the usual parameters the model carries a relevance-assessment
/// probe (weight + bias read at the ASSESS position) and a two-row guidance
/// table whose interpolation is injected at the GUIDE position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    pub specials: SpecialTokens,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 512,
            d_model: 128,
            n_layers: 2,
            n_heads: 4,
            max_seq_len: 256,
            specials: SpecialTokens::default(),
        }
    }
}

impl ModelConfig {
    /// Checks the internal consistency of the configuration.
    pub fn validate(&self) -> Result<(), ModelError> {
        for (field, value) in [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("max_seq_len", self.max_seq_len),
        ] {
            if value == 0 {
                return Err(ModelError::Config(format!("{field} must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        let ids = self.specials.all();
        for id in ids {
            if id as usize >= self.vocab_size {
                return Err(ModelError::Config(format!(
                    "special token id {id} out of range for vocab_size {}",
                    self.vocab_size
                )));
            }
        }
        for (i, a) in ids.iter().enumerate() {
            if ids[i + 1..].contains(a) {
                return Err(ModelError::Config(format!(
                    "special token id {a} assigned to more than one role"
                )));
            }
        }
        // The shortest meaningful layout is [BOS, SEP_DOC, SEP_QUERY, q, ASSESS].
        if self.max_seq_len < 8 {
            return Err(ModelError::Config(format!(
                "max_seq_len {} leaves no room for the sequence layout",
                self.max_seq_len
            )));
        }
        Ok(())
    }

    /// Per-head feature width.
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// MLP hidden width.
    pub fn mlp_dim(&self) -> usize {
        4 * self.d_model
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.head_dim(), 32);
        assert_eq!(cfg.mlp_dim(), 512);
    }

    #[test]
    fn rejects_head_mismatch() {
        let cfg = ModelConfig { d_model: 100, n_heads: 3, ..ModelConfig::default() };
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("divisible"), "{err}");
    }

    #[test]
    fn rejects_special_out_of_range() {
        let mut cfg = ModelConfig { vocab_size: 6, ..ModelConfig::default() };
        cfg.specials.guide = 6;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_duplicate_specials() {
        let mut cfg = ModelConfig::default();
        cfg.specials.guide = cfg.specials.assess;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("more than one role"), "{err}");
    }

    #[test]
    fn rejects_zero_dimensions() {
        let cfg = ModelConfig { n_layers: 0, ..ModelConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ModelConfig { n_layers: 3, ..ModelConfig::default() };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
