//! Scalar-precision numeric kernels shared by the forward, backward, and
//! decode paths.
//!
//! Everything runs in `f64`: the finite-difference gradient audit needs the
//! headroom (central differences in `f32` bottom out near 1e-3 relative
//! error), and on the sequence lengths this crate sees the model is far from
//! memory-bound, so the wider type costs little. The kernels are written as
//! straight slice iterators so the compiler can vectorize them; none of them
//! allocate.
//!
//! Matrices are row-major `Vec<f64>` slices with explicit row strides. A
//! `W: [rows × cols]` projection is applied as one dot product per output row
//! ([`matvec`]), which keeps both the weight rows and the input contiguous.

/// Dot product of two equal-length slices.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `out += alpha * x`.
#[inline]
pub fn axpy(out: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(out.len(), x.len());
    for (o, v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// `y = W x` for row-major `W: [rows × cols]`, writing into `y: [rows]`.
#[inline]
pub fn matvec(y: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), y.len() * cols);
    for (yi, row) in y.iter_mut().zip(w.chunks_exact(cols)) {
        *yi = dot(row, x);
    }
}

/// `x_grad += Wᵀ y_grad` for row-major `W: [rows × cols]`; the transpose is
/// applied as one axpy per row so memory access stays sequential.
#[inline]
pub fn matvec_transpose_acc(x_grad: &mut [f64], w: &[f64], y_grad: &[f64]) {
    let cols = x_grad.len();
    debug_assert_eq!(w.len(), y_grad.len() * cols);
    for (g, row) in y_grad.iter().zip(w.chunks_exact(cols)) {
        axpy(x_grad, *g, row);
    }
}

/// `W_grad += y_grad ⊗ x` (outer product accumulate) for row-major
/// `W_grad: [rows × cols]`.
#[inline]
pub fn outer_acc(w_grad: &mut [f64], y_grad: &[f64], x: &[f64]) {
    let cols = x.len();
    debug_assert_eq!(w_grad.len(), y_grad.len() * cols);
    for (g, row) in y_grad.iter().zip(w_grad.chunks_exact_mut(cols)) {
        axpy(row, *g, x);
    }
}

/// Root-mean-square normalization with a learned per-channel gain:
/// `out[i] = x[i] * gain[i] / rms(x)` where `rms(x) = sqrt(mean(x²) + eps)`.
///
/// Returns `1 / rms(x)` so the backward pass can reuse it.
#[inline]
pub fn rmsnorm(out: &mut [f64], x: &[f64], gain: &[f64]) -> f64 {
    let inv = 1.0 / (mean_square(x) + RMS_EPS).sqrt();
    for ((o, xi), g) in out.iter_mut().zip(x).zip(gain) {
        *o = xi * inv * g;
    }
    inv
}

/// Accumulates gradients through [`rmsnorm`].
///
/// Given the upstream gradient w.r.t. the normalized output, adds the
/// gradient w.r.t. the input into `x_grad` and w.r.t. the gain into
/// `gain_grad`. `inv_rms` must be the value returned by the forward call.
pub fn rmsnorm_backward(
    x_grad: &mut [f64],
    gain_grad: &mut [f64],
    out_grad: &[f64],
    x: &[f64],
    gain: &[f64],
    inv_rms: f64,
) {
    let n = x.len() as f64;
    // d/dx_i of x_j * inv * g_j: inv * g_i on the diagonal, plus every output
    // feeling the shift in inv = (mean(x²)+eps)^{-1/2}.
    let mut dot_gx = 0.0;
    for ((go, xi), g) in out_grad.iter().zip(x).zip(gain) {
        dot_gx += go * g * xi;
    }
    let scale = dot_gx * inv_rms * inv_rms * inv_rms / n;
    for (((xg, go), xi), g) in x_grad.iter_mut().zip(out_grad).zip(x).zip(gain) {
        *xg += go * g * inv_rms - xi * scale;
    }
    for ((gg, go), xi) in gain_grad.iter_mut().zip(out_grad).zip(x) {
        *gg += go * xi * inv_rms;
    }
}

/// Epsilon inside the RMS to keep the norm finite on all-zero rows.
pub const RMS_EPS: f64 = 1e-6;

#[inline]
fn mean_square(x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for v in x {
        acc += v * v;
    }
    acc / x.len() as f64
}

/// SiLU activation `x * sigmoid(x)`; smooth everywhere, which matters for the
/// finite-difference gradient audit (a kink like ReLU's would poison central
/// differences near zero).
#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Derivative of [`silu`].
#[inline]
pub fn silu_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Numerically stable logistic sigmoid.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + eˣ)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// In-place softmax over `x`, max-subtracted for stability.
pub fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// `ln softmax(logits)[target]` without materializing the full softmax.
pub fn log_softmax_at(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits {
        sum += (v - max).exp();
    }
    logits[target] - max - sum.ln()
}

/// Index of the largest value; ties break toward the lowest index so greedy
/// decoding is deterministic.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate().skip(1) {
        if *v > x[best] {
            best = i;
        }
    }
    best
}
