//! Forward evaluation.
//!
//! There is exactly one per-position kernel, [`TinyLm::advance_position`]:
//! it appends the position's keys/values to the running per-layer cache and
//! returns the final-normed hidden state. The full-sequence forward, the
//! training forward (which additionally records a [`ForwardTrace`] for
//! backprop), and the incremental decode in [`super::decode`] all call it,
//! which is what makes cached and uncached evaluation agree bitwise: they
//! are the same arithmetic in the same order.

use super::math::{axpy, dot, matvec, rmsnorm, sigmoid, silu, softmax_in_place};
use super::{ModelError, SequenceLayout, TinyLm};
use crate::Token;

/// Growing per-layer key/value store; one per transformer block. Also the
/// building block of [`super::DecodeState`].
#[derive(Debug, Clone, Default)]
pub(crate) struct LayerKv {
    /// `len·d_model` keys, row per position.
    pub k: Vec<f64>,
    /// `len·d_model` values, row per position.
    pub v: Vec<f64>,
}

/// How the GUIDE position is filled during a training forward.
#[derive(Debug, Clone, Copy)]
pub(crate) enum GuidanceSource {
    /// Inject the embedding of a fixed label score.
    Teacher(f64),
    /// Inject the embedding of the model's own assessed score, computed from
    /// the hidden state at ASSESS mid-forward. The score is treated as a
    /// constant during backprop (stop-gradient).
    SelfFed,
}

/// Everything the backward pass needs from a training forward, recorded
/// position by position.
#[derive(Debug, Default)]
pub(crate) struct ForwardTrace {
    /// Tokens actually fed (the guided layout minus its trailing EOS, which
    /// is only ever a prediction target).
    pub tokens: Vec<Token>,
    /// `(position, score)` of the guidance injection.
    pub guide: Option<(usize, f64)>,
    /// Input embeddings, `len·d`.
    pub x0: Vec<f64>,
    pub layers: Vec<LayerTrace>,
    /// Input to the final norm, `len·d`.
    pub x_final: Vec<f64>,
    /// `1/rms` of the final norm per position.
    pub final_inv: Vec<f64>,
    /// Final-normed hidden states, `len·d`.
    pub hidden: Vec<f64>,
}

#[derive(Debug, Default)]
pub(crate) struct LayerTrace {
    pub x_in: Vec<f64>,
    pub n1: Vec<f64>,
    pub inv1: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Attention weights, ragged: position `t` contributes `n_heads·(t+1)`
    /// values, heads in order, each row softmax-normalized over `0..=t`.
    pub attn: Vec<f64>,
    pub ctx: Vec<f64>,
    pub x_mid: Vec<f64>,
    pub n2: Vec<f64>,
    pub inv2: Vec<f64>,
    pub h_pre: Vec<f64>,
    pub h_act: Vec<f64>,
}

impl LayerTrace {
    /// Attention row for `(position, head)`.
    pub fn attn_row(&self, n_heads: usize, t: usize, h: usize) -> &[f64] {
        let base = n_heads * (t * (t + 1)) / 2 + h * (t + 1);
        &self.attn[base..base + t + 1]
    }
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn hidden_row(&self, t: usize, d: usize) -> &[f64] {
        &self.hidden[t * d..(t + 1) * d]
    }
}

/// Hidden states and next-token logits for a full sequence, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub len: usize,
    /// `len·d_model` final-normed hidden states.
    pub hidden: Vec<f64>,
    /// `len·vocab_size` next-token logits.
    pub logits: Vec<f64>,
    d_model: usize,
    vocab_size: usize,
}

impl ForwardOutput {
    pub fn hidden_row(&self, t: usize) -> &[f64] {
        &self.hidden[t * self.d_model..(t + 1) * self.d_model]
    }

    pub fn logits_row(&self, t: usize) -> &[f64] {
        &self.logits[t * self.vocab_size..(t + 1) * self.vocab_size]
    }
}

impl TinyLm {
    /// Runs one position through every block, appending to `kvs` and
    /// optionally recording trace rows. `x0` is the already-resolved input
    /// embedding; `t` is the absolute position. Returns the final-normed
    /// hidden state.
    pub(crate) fn advance_position(
        &self,
        kvs: &mut [LayerKv],
        x0: &[f64],
        t: usize,
        mut trace: Option<&mut ForwardTrace>,
    ) -> Vec<f64> {
        let cfg = &self.cfg;
        let d = cfg.d_model;
        let hd = cfg.head_dim();
        let m = cfg.mlp_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let p = &self.params;
        debug_assert!(t < cfg.max_seq_len);
        debug_assert_eq!(x0.len(), d);

        if let Some(tr) = trace.as_deref_mut() {
            tr.x0.extend_from_slice(x0);
        }

        let mut x = x0.to_vec();
        let mut n = vec![0.0; d];
        let mut q = vec![0.0; d];
        let mut ctx = vec![0.0; d];
        let mut scores = vec![0.0; t + 1];
        let mut h_pre = vec![0.0; m];
        let mut h_act = vec![0.0; m];
        let mut proj = vec![0.0; d];

        for (l, spans) in self.layout.layers.iter().enumerate() {
            let kv = &mut kvs[l];

            // Attention sub-block: x += Wo · attend(norm(x)).
            let inv1 = rmsnorm(&mut n, &x, spans.attn_norm.of(p));
            matvec(&mut q, spans.wq.of(p), &n);
            let base = kv.k.len();
            kv.k.resize(base + d, 0.0);
            kv.v.resize(base + d, 0.0);
            matvec(&mut kv.k[base..], spans.wk.of(p), &n);
            matvec(&mut kv.v[base..], spans.wv.of(p), &n);
            debug_assert_eq!(kv.k.len(), (t + 1) * d);

            ctx.fill(0.0);
            for h in 0..cfg.n_heads {
                let hoff = h * hd;
                let qh = &q[hoff..hoff + hd];
                for (u, s) in scores.iter_mut().enumerate() {
                    *s = dot(qh, &kv.k[u * d + hoff..u * d + hoff + hd]) * scale;
                }
                softmax_in_place(&mut scores);
                for (u, s) in scores.iter().enumerate() {
                    axpy(&mut ctx[hoff..hoff + hd], *s, &kv.v[u * d + hoff..u * d + hoff + hd]);
                }
                if let Some(tr) = trace.as_deref_mut() {
                    tr.layers[l].attn.extend_from_slice(&scores);
                }
            }
            matvec(&mut proj, spans.wo.of(p), &ctx);

            if let Some(tr) = trace.as_deref_mut() {
                let lt = &mut tr.layers[l];
                lt.x_in.extend_from_slice(&x);
                lt.inv1.push(inv1);
                lt.n1.extend_from_slice(&n);
                lt.q.extend_from_slice(&q);
                lt.ctx.extend_from_slice(&ctx);
            }
            axpy(&mut x, 1.0, &proj); // x is now the attention residual sum.

            // MLP sub-block: x += W2 · silu(W1 · norm(x)).
            let inv2 = rmsnorm(&mut n, &x, spans.mlp_norm.of(p));
            matvec(&mut h_pre, spans.w1.of(p), &n);
            for (a, hp) in h_act.iter_mut().zip(&h_pre) {
                *a = silu(*hp);
            }
            matvec(&mut proj, spans.w2.of(p), &h_act);

            if let Some(tr) = trace.as_deref_mut() {
                let lt = &mut tr.layers[l];
                lt.x_mid.extend_from_slice(&x);
                lt.inv2.push(inv2);
                lt.n2.extend_from_slice(&n);
                lt.h_pre.extend_from_slice(&h_pre);
                lt.h_act.extend_from_slice(&h_act);
            }
            axpy(&mut x, 1.0, &proj);
        }

        let mut out = vec![0.0; d];
        let inv = rmsnorm(&mut out, &x, self.layout.final_norm.of(p));
        if let Some(tr) = trace.as_deref_mut() {
            tr.x_final.extend_from_slice(&x);
            tr.final_inv.push(inv);
            tr.hidden.extend_from_slice(&out);
        }
        out
    }

    /// Full-sequence forward for inspection and tests: hidden states and
    /// next-token logits at every position.
    ///
    /// `injected` maps positions to embeddings that fully replace the token
    /// and position embedding there (the mechanism behind guidance
    /// injection). Positions must be in range, distinct, and `d_model` wide.
    pub fn forward(
        &self,
        tokens: &[Token],
        injected: &[(usize, Vec<f64>)],
    ) -> Result<ForwardOutput, ModelError> {
        let cfg = &self.cfg;
        let d = cfg.d_model;
        if tokens.is_empty() {
            return Err(ModelError::InvalidArgument("token sequence must be non-empty".into()));
        }
        if tokens.len() > cfg.max_seq_len {
            return Err(ModelError::SequenceTooLong { len: tokens.len(), max: cfg.max_seq_len });
        }
        for &t in tokens {
            if t as usize >= cfg.vocab_size {
                return Err(ModelError::InvalidContent(format!(
                    "token {t} out of range for vocab_size {}",
                    cfg.vocab_size
                )));
            }
        }
        for (i, (pos, emb)) in injected.iter().enumerate() {
            if *pos >= tokens.len() {
                return Err(ModelError::InvalidArgument(format!(
                    "injected position {pos} beyond sequence length {}",
                    tokens.len()
                )));
            }
            if emb.len() != d {
                return Err(ModelError::InvalidArgument(format!(
                    "injected embedding at {pos} has {} values, expected {d}",
                    emb.len()
                )));
            }
            if injected[i + 1..].iter().any(|(p, _)| p == pos) {
                return Err(ModelError::InvalidArgument(format!(
                    "position {pos} injected more than once"
                )));
            }
        }

        let mut kvs = vec![LayerKv::default(); cfg.n_layers];
        let mut x0 = vec![0.0; d];
        let mut hidden = Vec::with_capacity(tokens.len() * d);
        let mut logits = Vec::with_capacity(tokens.len() * cfg.vocab_size);
        for (t, &tok) in tokens.iter().enumerate() {
            match injected.iter().find(|(p, _)| *p == t) {
                Some((_, emb)) => x0.copy_from_slice(emb),
                None => self.embed_into(tok, t, &mut x0),
            }
            let h = self.advance_position(&mut kvs, &x0, t, None);
            let base = logits.len();
            logits.resize(base + cfg.vocab_size, 0.0);
            matvec(&mut logits[base..], self.layout.lm_head.of(&self.params), &h);
            hidden.extend_from_slice(&h);
        }
        Ok(ForwardOutput {
            len: tokens.len(),
            hidden,
            logits,
            d_model: d,
            vocab_size: cfg.vocab_size,
        })
    }

    /// Training forward over a guided layout (`…ASSESS, GUIDE, answer, EOS`),
    /// recording the trace backprop needs. The trailing EOS is a prediction
    /// target only and is not fed. Returns the trace; the guidance score that
    /// was injected is recorded in `trace.guide`.
    pub(crate) fn forward_guided(
        &self,
        layout: &SequenceLayout,
        guidance: GuidanceSource,
    ) -> Result<ForwardTrace, ModelError> {
        let cfg = &self.cfg;
        let d = cfg.d_model;
        let guide_pos = layout.guide_pos.ok_or_else(|| {
            ModelError::InvalidArgument("training forward requires a guided layout".into())
        })?;
        if layout.answer_start.is_none() {
            return Err(ModelError::InvalidArgument(
                "training forward requires a teacher answer".into(),
            ));
        }
        if let GuidanceSource::Teacher(s) = guidance {
            if !s.is_finite() || !(0.0..=1.0).contains(&s) {
                return Err(ModelError::InvalidArgument(format!(
                    "guidance score {s} outside [0, 1]"
                )));
            }
        }

        let feed = &layout.tokens[..layout.tokens.len() - 1];
        let mut trace = ForwardTrace {
            tokens: feed.to_vec(),
            layers: (0..cfg.n_layers).map(|_| LayerTrace::default()).collect(),
            ..ForwardTrace::default()
        };
        let mut kvs = vec![LayerKv::default(); cfg.n_layers];
        let mut x0 = vec![0.0; d];
        for (t, &tok) in feed.iter().enumerate() {
            if t == guide_pos {
                let s = match guidance {
                    GuidanceSource::Teacher(s) => s,
                    GuidanceSource::SelfFed => {
                        let v_rel = trace.hidden_row(layout.assess_pos, d);
                        let w = self.layout.assess_w.of(&self.params);
                        let b = self.layout.assess_b.of(&self.params)[0];
                        sigmoid(dot(w, v_rel) + b)
                    }
                };
                x0.copy_from_slice(&self.guidance_embed(s)?);
                trace.guide = Some((t, s));
            } else {
                self.embed_into(tok, t, &mut x0);
            }
            self.advance_position(&mut kvs, &x0, t, Some(&mut trace));
        }
        for (lt, kv) in trace.layers.iter_mut().zip(kvs) {
            lt.k = kv.k;
            lt.v = kv.v;
        }
        Ok(trace)
    }
}
