//! The tiny decoder-only language model with a relevance probe and guided
//! generation.
//!
//! # Architecture
//!
//! Pre-norm transformer blocks (RMS normalization with learned gains, no
//! projection biases), multi-head causal self-attention, SiLU MLPs of width
//! `4·d_model`, learned absolute position embeddings, a final RMS norm, and
//! an untied output projection. Two extras carry the retrieval behavior:
//!
//! * an **assessment probe** `(w, b)` read against the hidden state at the
//!   ASSESS position to produce a relevance logit, and
//! * a two-row **guidance table**: generation is conditioned by injecting
//!   `(1−s)·E₀ + s·E₁` at the GUIDE position in place of a token embedding,
//!   where `s` is the relevance score the answer should trust.
//!
//! # Numerics and determinism
//!
//! All compute is `f64` with single-threaded, fixed-order accumulation.
//! The full-sequence forward and the incremental decode path execute the
//! same per-position kernel ([`forward`] internals), so cached and uncached
//! evaluation agree **bitwise**, not just approximately. Checkpoints store
//! parameters as `f32` ([`checkpoint`]).

mod backward;
pub mod checkpoint;
mod config;
mod decode;
mod forward;
mod layout;
pub(crate) mod math;
mod params;

pub use config::{ModelConfig, SpecialTokens};
pub use decode::DecodeState;
pub use forward::ForwardOutput;
pub use layout::{check_content, fit_document, SequenceLayout};
pub use params::{ParamLayout, Span, TensorSpec, INIT_STD};

pub(crate) use backward::{backward, SeedGrads};
pub(crate) use forward::GuidanceSource;

use thiserror::Error;

use crate::relevance::RelevanceJudgment;
use crate::Token;

/// Errors raised by model construction and the model's sequence operations.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("invalid content: {0}")]
    InvalidContent(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// The model: configuration, parameter addressing, and one flat `f64`
/// parameter vector.
///
/// All sequence operations take `&self`; the type is `Send + Sync`, so
/// read-only evaluation may fan out across threads freely. Mutation happens
/// only through [`TinyLm::params_mut`] (the optimizer) and checkpoint
/// loading.
#[derive(Debug, Clone)]
pub struct TinyLm {
    pub(crate) cfg: ModelConfig,
    pub(crate) layout: ParamLayout,
    pub(crate) params: Vec<f64>,
}

impl TinyLm {
    /// Builds a freshly initialized model. Fails on an invalid config.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let layout = ParamLayout::new(&cfg);
        let params = layout.init_params(seed);
        Ok(Self { cfg, layout, params })
    }

    /// Rebuilds a model around an existing parameter vector (checkpoint
    /// loading, tests constructing exact weights). The vector length must
    /// match the layout for `cfg` and every value must be finite.
    pub fn from_params(cfg: ModelConfig, params: Vec<f64>) -> Result<Self, ModelError> {
        cfg.validate()?;
        let layout = ParamLayout::new(&cfg);
        if params.len() != layout.total() {
            return Err(ModelError::Config(format!(
                "parameter vector has {} values, layout requires {}",
                params.len(),
                layout.total()
            )));
        }
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::Config(format!("non-finite parameter at flat index {i}")));
        }
        Ok(Self { cfg, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    /// Addresses of every named tensor in [`TinyLm::params`].
    pub fn param_layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access for optimizers and tests that construct exact weights.
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.layout.total()
    }

    /// Relevance score from a relevance embedding (the hidden state returned
    /// by [`TinyLm::encode_relevance`]).
    pub fn assess(&self, v_rel: &[f64]) -> Result<RelevanceJudgment, ModelError> {
        let w = self.layout.assess_w.of(&self.params);
        let b = self.layout.assess_b.of(&self.params)[0];
        crate::relevance::assess(w, b, v_rel)
            .map_err(|e| ModelError::InvalidArgument(e.to_string()))
    }

    /// Guidance embedding `(1−s)·E₀ + s·E₁` injected at the GUIDE position.
    /// `s` must be a finite score in `[0, 1]`.
    pub fn guidance_embed(&self, s: f64) -> Result<Vec<f64>, ModelError> {
        if !s.is_finite() || !(0.0..=1.0).contains(&s) {
            return Err(ModelError::InvalidArgument(format!(
                "guidance score {s} outside [0, 1]"
            )));
        }
        let d = self.cfg.d_model;
        let table = self.layout.guide_emb.of(&self.params);
        let (e0, e1) = table.split_at(d);
        Ok(e0.iter().zip(e1).map(|(a, b)| (1.0 - s) * a + s * b).collect())
    }

    /// Relevance embedding: the final hidden state of the assessment prefix
    /// `[BOS, SEP_DOC, doc, SEP_QUERY, query, ASSESS]`. Errors if the prefix
    /// exceeds `max_seq_len`; shorten the document with [`fit_document`]
    /// first.
    pub fn encode_relevance(&self, query: &[Token], doc: &[Token]) -> Result<Vec<f64>, ModelError> {
        let layout = SequenceLayout::assessment(&self.cfg, query, doc)?;
        let (_, hidden) = self.prefill(&layout.tokens)?;
        Ok(hidden)
    }

    pub(crate) fn embed_into(&self, token: Token, pos: usize, out: &mut [f64]) {
        let d = self.cfg.d_model;
        let tok = self.layout.tok_emb.of(&self.params);
        let posm = self.layout.pos_emb.of(&self.params);
        let trow = &tok[token as usize * d..(token as usize + 1) * d];
        let prow = &posm[pos * d..(pos + 1) * d];
        for ((o, a), b) in out.iter_mut().zip(trow).zip(prow) {
            *o = a + b;
        }
    }
}
