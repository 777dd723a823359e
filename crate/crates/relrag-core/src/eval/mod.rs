//! Metrics and experiment harnesses: answer quality (EM/F1), selection
//! quality (Hit@1), judgment quality (JAcc), plus the sweep and ablation
//! runners that turn a trained model into comparison tables.
//!
//! Aggregates are plain means over the evaluation set (JAcc a fraction over
//! all documents), so every number is order-independent and reproduces
//! exactly for a given model, dataset, and seed. Reports carry a fingerprint
//! of the configuration that produced them, making rows from different runs
//! safely comparable — or loudly not.

mod harness;
mod metrics;

pub use harness::{
    evaluate, run_ablations, run_sweep, AblationRow, AblationVariant, EvalOptions, SweepAxis,
    SweepRow,
};
pub use metrics::{em, f1, hit_at_1, jacc, normalize};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid argument: {0}")]
    Domain(String),
    #[error(transparent)]
    Inference(#[from] crate::infer::InferenceError),
    #[error(transparent)]
    Train(#[from] crate::train::TrainError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

/// Aggregate metrics for one evaluation pass.
///
/// `em`, `f1`, and `hit_at_1` are means over examples; `jacc` is a fraction
/// over all judged documents. Per-example F1 ≥ EM (an exact match has full
/// token overlap), so the aggregate inequality holds on every dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub em: f64,
    pub f1: f64,
    pub hit_at_1: f64,
    pub jacc: f64,
    pub n_examples: usize,
    /// Digest of the configuration that produced this report; rows with
    /// different fingerprints are not comparable.
    pub config_fingerprint: String,
}

impl MetricReport {
    pub fn validate(&self) -> Result<(), EvalError> {
        for (name, v) in [
            ("em", self.em),
            ("f1", self.f1),
            ("hit_at_1", self.hit_at_1),
            ("jacc", self.jacc),
        ] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(EvalError::Domain(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.f1 < self.em {
            return Err(EvalError::Domain(format!(
                "aggregate F1 {} below EM {}; per-example F1 dominates EM, so \
                 something upstream miscounted",
                self.f1, self.em
            )));
        }
        if self.n_examples == 0 {
            return Err(EvalError::Domain("report over zero examples".into()));
        }
        Ok(())
    }
}

/// Hex SHA-256 of arbitrary config bytes; the `config_fingerprint` carried
/// by every report.
pub fn fingerprint(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
