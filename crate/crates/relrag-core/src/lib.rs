//! Relevance-aware retrieval-augmented generation on a desk-scale language model.
//!
//! The crate trains a tiny decoder-only transformer to do three things at once:
//!
//! 1. **Assess**: read `[BOS, SEP_DOC, doc, SEP_QUERY, query, ASSESS]` and emit a
//!    scalar relevance score from the hidden state at the `ASSESS` position
//!    (see [`model::TinyLm::encode_relevance`] and [`relevance::assess`]).
//! 2. **Generate under guidance**: continue the same prefix through a `GUIDE`
//!    position whose embedding is an interpolation controlled by the relevance
//!    score, so the decoder knows how much to trust the document
//!    ([`model::TinyLm::generate`]).
//! 3. **Verify**: pick among per-document answer candidates either by the
//!    assessed score alone or by blending in a knowledge-consistency signal —
//!    the likelihood of the drafted answer when the document is presented as
//!    irrelevant ([`infer`]).
//!
//! Training ([`train`]) combines a coarse binary relevance loss, a fine
//! pairwise ranking loss over documents of the same query, and a
//! noise-resistant generation loss that pairs every query with its gold answer
//! under both relevant and irrelevant documents. Supervision comes from a
//! synthetic planted-answer corpus ([`data`]) whose relevance labels are exact
//! by construction. [`eval`] adds span metrics, retrieval sweeps, and
//! leave-one-out ablations of the training signals.
//!
//! Everything is deterministic given the seeds in the public configs: corpus
//! bytes, training trajectories, decoding, and reports reproduce exactly.

pub mod data;
pub mod eval;
pub mod infer;
pub mod model;
pub mod relevance;
pub mod train;

pub use data::{
    generate_corpus, label_machine, oracle_score, sample_negatives, sampling_weight, CorpusSpec,
    DataError, QaExample, SamplerParams, ScoredDocument, Split,
};
pub use eval::{em, f1, hit_at_1, jacc, EvalError, MetricReport};
pub use infer::{
    consistency, select, AnswerCandidate, InferenceEngine, InferenceError, Strategy,
    VerificationPolicy,
};
pub use model::{ModelConfig, ModelError, SpecialTokens, TinyLm};
pub use relevance::{
    assess, bi_granularity_loss, coarse_loss, fine_loss, preference_pairs, PreferencePair,
    RelevanceError, RelevanceJudgment,
};
pub use train::{
    noise_resistant_loss, total_loss, total_loss_with_gradients, train, LossBreakdown,
    TrainError, TrainOptions, TrainSchedule, TrainingInstance,
};

/// Token id type used throughout. The vocabulary is small; `u32` keeps the
/// serialized datasets compact and unambiguous.
pub type Token = u32;

/// Derives a child seed from a master seed and up to two stream labels.
///
/// Used wherever one user-facing seed must fan out into independent streams
/// (per-example corpus RNGs, per-epoch negative resampling) without the
/// streams colliding or depending on iteration order. SplitMix64 is the
/// standard finalizer for this; two rounds keep distinct `(stream, salt)`
/// pairs statistically independent.
pub fn derive_seed(master: u64, stream: u64, salt: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    splitmix(splitmix(master ^ splitmix(stream)) ^ salt)
}
