//! Manual reverse-mode differentiation over a recorded [`ForwardTrace`].
//!
//! The losses hand over sparse seed gradients — rows of `∂L/∂logits` at
//! teacher-forced positions and scalars `∂L/∂z` at ASSESS positions — and
//! this pass accumulates `∂L/∂θ` for every parameter into one flat vector,
//! in the same order for every call, single-threaded. Running it twice on
//! the same trace produces bitwise-identical gradients.
//!
//! Guidance injections are differentiated into the guidance table rows
//! (`∂L/∂E₀ += (1−s)·∂L/∂x₀`, likewise `E₁`); the score `s` itself is a
//! label or a stop-gradient self-assessment, so no gradient flows into it.

use super::forward::ForwardTrace;
use super::math::{axpy, dot, matvec_transpose_acc, outer_acc, rmsnorm_backward, silu_derivative};
use super::TinyLm;

/// Sparse upstream gradients seeding the backward pass.
#[derive(Debug, Default)]
pub(crate) struct SeedGrads {
    /// `(position, ∂L/∂logits[position])`, each row `vocab_size` wide.
    pub logit_rows: Vec<(usize, Vec<f64>)>,
    /// `(position, ∂L/∂z)` where `z` is the assessment logit read at
    /// `position`.
    pub assess: Vec<(usize, f64)>,
}

/// Accumulates parameter gradients for one traced forward into `grads`
/// (same length and layout as the model's flat parameter vector).
pub(crate) fn backward(model: &TinyLm, trace: &ForwardTrace, seeds: &SeedGrads, grads: &mut [f64]) {
    let cfg = &model.cfg;
    let layout = &model.layout;
    let p = &model.params;
    let d = cfg.d_model;
    let m = cfg.mlp_dim();
    let hd = cfg.head_dim();
    let n_heads = cfg.n_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let len = trace.len();
    debug_assert_eq!(grads.len(), layout.total());

    // ∂L/∂hidden (post final norm), seeded by the output head and the probe.
    let mut d_hidden = vec![0.0; len * d];
    for (pos, dlog) in &seeds.logit_rows {
        debug_assert!(*pos < len && dlog.len() == cfg.vocab_size);
        let h = trace.hidden_row(*pos, d);
        outer_acc(layout.lm_head.of_mut(grads), dlog, h);
        matvec_transpose_acc(&mut d_hidden[pos * d..(pos + 1) * d], layout.lm_head.of(p), dlog);
    }
    for (pos, dz) in &seeds.assess {
        debug_assert!(*pos < len);
        let h = trace.hidden_row(*pos, d);
        axpy(&mut d_hidden[pos * d..(pos + 1) * d], *dz, layout.assess_w.of(p));
        axpy(layout.assess_w.of_mut(grads), *dz, h);
        layout.assess_b.of_mut(grads)[0] += dz;
    }

    // Final norm: d_x becomes ∂L/∂(last block output).
    let mut d_x = vec![0.0; len * d];
    {
        let gain = layout.final_norm.of(p);
        // Split-borrow: the gain gradient span is disjoint from everything
        // accumulated here, but the borrow checker cannot see through the
        // single flat slice, so stage into a local and add after.
        let mut gain_grad = vec![0.0; d];
        for t in 0..len {
            rmsnorm_backward(
                &mut d_x[t * d..(t + 1) * d],
                &mut gain_grad,
                &d_hidden[t * d..(t + 1) * d],
                &trace.x_final[t * d..(t + 1) * d],
                gain,
                trace.final_inv[t],
            );
        }
        axpy(layout.final_norm.of_mut(grads), 1.0, &gain_grad);
    }

    let mut d_ctx = vec![0.0; len * d];
    let mut d_q = vec![0.0; len * d];
    let mut d_k = vec![0.0; len * d];
    let mut d_v = vec![0.0; len * d];
    let mut d_hact = vec![0.0; m];
    let mut d_hpre = vec![0.0; m];
    let mut d_n = vec![0.0; d];
    let mut d_att = vec![0.0; len];
    let mut gain_grad = vec![0.0; d];

    for (l, spans) in layout.layers.iter().enumerate().rev() {
        let lt = &trace.layers[l];

        // MLP sub-block. On entry d_x holds ∂L/∂x_out; on exit ∂L/∂x_mid.
        gain_grad.fill(0.0);
        for t in 0..len {
            let dxo = d_x[t * d..(t + 1) * d].to_vec();
            let h_act = &lt.h_act[t * m..(t + 1) * m];
            let h_pre = &lt.h_pre[t * m..(t + 1) * m];
            let n2 = &lt.n2[t * d..(t + 1) * d];
            outer_acc(spans.w2.of_mut(grads), &dxo, h_act);
            d_hact.fill(0.0);
            matvec_transpose_acc(&mut d_hact, spans.w2.of(p), &dxo);
            for ((dp, da), hp) in d_hpre.iter_mut().zip(&d_hact).zip(h_pre) {
                *dp = da * silu_derivative(*hp);
            }
            outer_acc(spans.w1.of_mut(grads), &d_hpre, n2);
            d_n.fill(0.0);
            matvec_transpose_acc(&mut d_n, spans.w1.of(p), &d_hpre);
            rmsnorm_backward(
                &mut d_x[t * d..(t + 1) * d],
                &mut gain_grad,
                &d_n,
                &lt.x_mid[t * d..(t + 1) * d],
                spans.mlp_norm.of(p),
                lt.inv2[t],
            );
        }
        axpy(spans.mlp_norm.of_mut(grads), 1.0, &gain_grad);

        // Attention output projection: ∂L/∂ctx per position.
        d_ctx.fill(0.0);
        for t in 0..len {
            let dxm = &d_x[t * d..(t + 1) * d];
            outer_acc(spans.wo.of_mut(grads), dxm, &lt.ctx[t * d..(t + 1) * d]);
            matvec_transpose_acc(&mut d_ctx[t * d..(t + 1) * d], spans.wo.of(p), dxm);
        }

        // Attention weights: softmax rows couple each position to its past.
        d_q.fill(0.0);
        d_k.fill(0.0);
        d_v.fill(0.0);
        for h in 0..n_heads {
            let hoff = h * hd;
            for t in 0..len {
                let aw = lt.attn_row(n_heads, t, h);
                let dctx = &d_ctx[t * d + hoff..t * d + hoff + hd];
                let d_aw = &mut d_att[..=t];
                for (u, da) in d_aw.iter_mut().enumerate() {
                    *da = dot(dctx, &lt.v[u * d + hoff..u * d + hoff + hd]);
                    axpy(&mut d_v[u * d + hoff..u * d + hoff + hd], aw[u], dctx);
                }
                let inner = dot(aw, d_aw);
                let qh = lt.q[t * d + hoff..t * d + hoff + hd].to_vec();
                for u in 0..=t {
                    let ds = aw[u] * (d_aw[u] - inner) * scale;
                    axpy(
                        &mut d_q[t * d + hoff..t * d + hoff + hd],
                        ds,
                        &lt.k[u * d + hoff..u * d + hoff + hd],
                    );
                    axpy(&mut d_k[u * d + hoff..u * d + hoff + hd], ds, &qh);
                }
            }
        }

        // Input projections and the attention norm. d_x ends as ∂L/∂x_in,
        // which is ∂L/∂x_out of the block below.
        gain_grad.fill(0.0);
        for t in 0..len {
            let n1 = &lt.n1[t * d..(t + 1) * d];
            d_n.fill(0.0);
            outer_acc(spans.wq.of_mut(grads), &d_q[t * d..(t + 1) * d], n1);
            matvec_transpose_acc(&mut d_n, spans.wq.of(p), &d_q[t * d..(t + 1) * d]);
            outer_acc(spans.wk.of_mut(grads), &d_k[t * d..(t + 1) * d], n1);
            matvec_transpose_acc(&mut d_n, spans.wk.of(p), &d_k[t * d..(t + 1) * d]);
            outer_acc(spans.wv.of_mut(grads), &d_v[t * d..(t + 1) * d], n1);
            matvec_transpose_acc(&mut d_n, spans.wv.of(p), &d_v[t * d..(t + 1) * d]);
            rmsnorm_backward(
                &mut d_x[t * d..(t + 1) * d],
                &mut gain_grad,
                &d_n,
                &lt.x_in[t * d..(t + 1) * d],
                spans.attn_norm.of(p),
                lt.inv1[t],
            );
        }
        axpy(spans.attn_norm.of_mut(grads), 1.0, &gain_grad);
    }

    // Input embeddings; the guidance injection routes into the table rows.
    for (t, &tok) in trace.tokens.iter().enumerate() {
        let dx = &d_x[t * d..(t + 1) * d];
        match trace.guide {
            Some((pos, s)) if pos == t => {
                let table = layout.guide_emb.of_mut(grads);
                let (e0, e1) = table.split_at_mut(d);
                axpy(e0, 1.0 - s, dx);
                axpy(e1, s, dx);
            }
            _ => {
                let tok_grad = layout.tok_emb.of_mut(grads);
                axpy(&mut tok_grad[tok as usize * d..(tok as usize + 1) * d], 1.0, dx);
                let pos_grad = layout.pos_emb.of_mut(grads);
                axpy(&mut pos_grad[t * d..(t + 1) * d], 1.0, dx);
            }
        }
    }
}
