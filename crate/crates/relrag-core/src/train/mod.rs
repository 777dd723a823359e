//! Joint training of assessment and guided generation.
//!
//! A batch is a flat list of [`TrainingInstance`]s in which instances sharing
//! a query sit adjacent; each maximal run of equal queries forms one ranking
//! group. Three losses are computed on the same batch and summed:
//!
//! * **coarse**: binary cross-entropy of the assessed score against the
//!   containment label `y`, averaged over every instance;
//! * **fine**: pairwise ranking of assessed logits within each query group,
//!   driven by teacher-label gaps, averaged over groups;
//! * **generation**: negative log-likelihood of the *gold* answer under the
//!   guided layout, averaged over answer tokens and instances — negatives are
//!   paired with the gold answer on purpose, so the model learns to fall back
//!   on its own knowledge when the document is junk.
//!
//! The guidance score injected during training is the teacher label (or the
//! model's own assessment under [`TrainOptions::self_feeding_guidance`]); in
//! both cases it is a constant for backprop — no gradient reaches the
//! assessment head through the generation path.
//!
//! [`train`] runs linear warmup into cosine decay with an adaptive-moment
//! optimizer, resamples negatives every epoch from per-epoch derived streams,
//! and aborts with a serialized batch dump the moment a loss turns
//! non-finite. Everything is deterministic in `(dataset, schedule, options)`.

mod loss;
mod optim;
mod run;

pub use loss::{noise_resistant_loss, total_loss, LossBreakdown, TrainingInstance};
pub use optim::Adam;
pub use run::{train, StepMetrics};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::SamplerParams;
use crate::model::{ModelError, TinyLm};
use crate::relevance::RelevanceError;

/// Loss and parameter gradients for one batch: exactly what a training step
/// computes between forward and optimizer update, exposed for gradient
/// verification and custom loops. `grads` must be zeroed by the caller and
/// sized to the model's parameter count; with teacher-label guidance the
/// returned values equal [`total_loss`] bitwise.
pub fn total_loss_with_gradients(
    model: &TinyLm,
    batch: &[TrainingInstance],
    options: &TrainOptions,
    grads: &mut [f64],
) -> Result<LossBreakdown, TrainError> {
    options.validate()?;
    loss::total_loss_with_grad(
        model,
        batch,
        options.use_fine_loss,
        options.self_feeding_guidance,
        grads,
    )
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("invalid batch: {0}")]
    Batch(String),
    #[error("invalid training data: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Relevance(#[from] RelevanceError),
    /// Training aborted on a non-finite loss. `dump` holds the offending
    /// batch serialized as JSON so the failure can be replayed.
    #[error("non-finite loss {total} at step {step}; offending batch attached as JSON dump")]
    NonFinite { step: usize, total: f64, dump: String },
}

/// Optimization schedule: linear warmup over the leading fraction of steps,
/// then cosine decay to zero over the remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub learning_rate: f64,
    /// Fraction of total optimizer steps spent warming up, in `[0, 1)`.
    pub warmup_frac: f64,
    /// Zero is allowed and makes [`train`] a no-op that returns the model
    /// untouched — useful for baselines.
    pub epochs: usize,
    /// Queries per optimizer step; each query brings its gold document and
    /// its sampled negatives into the same batch.
    pub batch_size: usize,
    /// Seeds epoch shuffles and per-epoch negative resampling.
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self { learning_rate: 3e-4, warmup_frac: 0.03, epochs: 3, batch_size: 32, seed: 0 }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(TrainError::Schedule(format!(
                "learning_rate {} must be a positive real",
                self.learning_rate
            )));
        }
        if !self.warmup_frac.is_finite() || !(0.0..1.0).contains(&self.warmup_frac) {
            return Err(TrainError::Schedule(format!(
                "warmup_frac {} must lie in [0, 1)",
                self.warmup_frac
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Schedule("batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate for `step` (0-based) out of `total_steps`.
    pub fn lr_at(&self, step: usize, total_steps: usize) -> f64 {
        if total_steps == 0 || step >= total_steps {
            return 0.0;
        }
        let warmup = ((self.warmup_frac * total_steps as f64).ceil() as usize).min(total_steps - 1);
        if step < warmup {
            self.learning_rate * (step + 1) as f64 / warmup as f64
        } else {
            let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
            self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

/// How negative documents reach a training batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSampling {
    /// Difficulty-weighted sampling concentrated just below the gold
    /// document's retrieval score.
    Refined,
    /// Uniform over the irrelevant candidates; the sampling-strategy
    /// ablation baseline.
    Random,
}

/// Trainer switches. The defaults are the full method; each flag removes one
/// ingredient for the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    /// Include the pairwise ranking term. Off = coarse-only assessment.
    pub use_fine_loss: bool,
    /// Pair each gold document with sampled negatives. Off = one gold
    /// document per query and nothing else in the batch.
    pub pair_negatives: bool,
    pub negative_sampling: NegativeSampling,
    /// Inject the model's own assessed score during training instead of the
    /// teacher label (still constant for backprop).
    pub self_feeding_guidance: bool,
    pub sampler: SamplerParams,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            use_fine_loss: true,
            pair_negatives: true,
            negative_sampling: NegativeSampling::Refined,
            self_feeding_guidance: false,
            sampler: SamplerParams::default(),
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.sampler.validate().map_err(|e| TrainError::Data(e.to_string()))
    }
}
