//! Flat parameter storage with a named layout.
//!
//! All learned tensors live in one `Vec<f64>` and are addressed through
//! [`ParamLayout`] spans. One flat vector means the optimizer, the gradient
//! audit, and the checkpoint writer all iterate a single slice and can never
//! disagree about parameter order; the named [`TensorSpec`] table is what the
//! checkpoint header serializes so a loaded file is verified tensor by
//! tensor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ModelConfig;

/// Standard deviation of the Gaussian init for embeddings and projections.
/// Norm gains start at 1 and the assessment bias at 0.
pub const INIT_STD: f64 = 0.02;

/// Contiguous region of the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub len: usize,
}

impl Span {
    pub fn of<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.start..self.start + self.len]
    }

    pub fn of_mut<'a>(&self, params: &'a mut [f64]) -> &'a mut [f64] {
        &mut params[self.start..self.start + self.len]
    }
}

/// Name and shape of one tensor inside the flat vector, as recorded in
/// checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Spans of one transformer block.
#[derive(Debug, Clone, Copy)]
pub struct LayerSpans {
    pub attn_norm: Span,
    pub wq: Span,
    pub wk: Span,
    pub wv: Span,
    pub wo: Span,
    pub mlp_norm: Span,
    pub w1: Span,
    pub w2: Span,
}

/// Addresses of every tensor for a given [`ModelConfig`].
#[derive(Debug, Clone)]
pub struct ParamLayout {
    specs: Vec<TensorSpec>,
    total: usize,
    pub tok_emb: Span,
    pub pos_emb: Span,
    pub layers: Vec<LayerSpans>,
    pub final_norm: Span,
    pub lm_head: Span,
    pub assess_w: Span,
    pub assess_b: Span,
    pub guide_emb: Span,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let mut specs = Vec::new();
        let mut cursor = 0usize;
        let mut push = |name: String, shape: Vec<usize>| -> Span {
            let len: usize = shape.iter().product();
            let span = Span { start: cursor, len };
            specs.push(TensorSpec { name, shape, offset: cursor });
            cursor += len;
            span
        };

        let tok_emb = push("tok_emb".into(), vec![cfg.vocab_size, d]);
        let pos_emb = push("pos_emb".into(), vec![cfg.max_seq_len, d]);
        let layers = (0..cfg.n_layers)
            .map(|i| LayerSpans {
                attn_norm: push(format!("layers.{i}.attn_norm"), vec![d]),
                wq: push(format!("layers.{i}.wq"), vec![d, d]),
                wk: push(format!("layers.{i}.wk"), vec![d, d]),
                wv: push(format!("layers.{i}.wv"), vec![d, d]),
                wo: push(format!("layers.{i}.wo"), vec![d, d]),
                mlp_norm: push(format!("layers.{i}.mlp_norm"), vec![d]),
                w1: push(format!("layers.{i}.w1"), vec![cfg.mlp_dim(), d]),
                w2: push(format!("layers.{i}.w2"), vec![d, cfg.mlp_dim()]),
            })
            .collect();
        let final_norm = push("final_norm".into(), vec![d]);
        let lm_head = push("lm_head".into(), vec![cfg.vocab_size, d]);
        let assess_w = push("assess_w".into(), vec![d]);
        let assess_b = push("assess_b".into(), vec![1]);
        let guide_emb = push("guide_emb".into(), vec![2, d]);

        Self {
            specs,
            total: cursor,
            tok_emb,
            pos_emb,
            layers,
            final_norm,
            lm_head,
            assess_w,
            assess_b,
            guide_emb,
        }
    }

    /// Total number of scalar parameters.
    pub fn total(&self) -> usize {
        self.total
    }

    /// Tensor table in flat-vector order.
    pub fn tensors(&self) -> &[TensorSpec] {
        &self.specs
    }

    /// Freshly initialized parameter vector: Gaussian `N(0, INIT_STD²)` for
    /// embeddings, projections, the assessment weight, and the guidance
    /// table; ones for norm gains; zero for the assessment bias. Every draw
    /// comes from one seeded stream in tensor order, so the same seed always
    /// produces the same bytes.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut params = vec![0.0; self.total];
        for spec in &self.specs {
            let span = Span { start: spec.offset, len: spec.len() };
            let values = span.of_mut(&mut params);
            if spec.name.ends_with("norm") {
                values.fill(1.0);
            } else if spec.name == "assess_b" {
                values.fill(0.0);
            } else {
                for v in values {
                    *v = normal.sample(&mut rng);
                }
            }
        }
        params
    }
}
