//! Low-level forward/backward building blocks for the micro transformer.
//!
//! All buffers are flat row-major f64 with explicit dimensions. Every
//! forward returns the cache its backward needs; backwards accumulate into
//! the caller's gradient buffers. Summation orders are fixed, so results are
//! bitwise reproducible for identical inputs.

#![allow(clippy::too_many_arguments)]

use alloc::vec;
use alloc::vec::Vec;

use super::params::{AttentionParams, FfnParams, LayerNormParams};

const LN_EPS: f64 = 1e-5;

/// Dot product with four independent partial sums (fixed combine order).
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = [0.0f64; 4];
    let n = a.len();
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        s[0] += a[i] * b[i];
        s[1] += a[i + 1] * b[i + 1];
        s[2] += a[i + 2] * b[i + 2];
        s[3] += a[i + 3] * b[i + 3];
    }
    for i in chunks * 4..n {
        s[0] += a[i] * b[i];
    }
    (s[0] + s[1]) + (s[2] + s[3])
}

/// y[t, :] = W·x[t, :] + b with W stored [dout][din] row-major.
pub(crate) fn linear_fwd(
    x: &[f64],
    rows: usize,
    din: usize,
    w: &[f64],
    b: &[f64],
    dout: usize,
) -> Vec<f64> {
    let mut y = vec![0.0; rows * dout];
    for t in 0..rows {
        let xr = &x[t * din..(t + 1) * din];
        let yr = &mut y[t * dout..(t + 1) * dout];
        for o in 0..dout {
            yr[o] = b[o] + dot(&w[o * din..(o + 1) * din], xr);
        }
    }
    y
}

/// Backward of `linear_fwd`; accumulates into `dw`/`db` and returns dx.
pub(crate) fn linear_bwd(
    x: &[f64],
    dy: &[f64],
    w: &[f64],
    rows: usize,
    din: usize,
    dout: usize,
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * din];
    for t in 0..rows {
        let xr = &x[t * din..(t + 1) * din];
        let dyr = &dy[t * dout..(t + 1) * dout];
        let dxr = &mut dx[t * din..(t + 1) * din];
        for o in 0..dout {
            let g = dyr[o];
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            let wr = &w[o * din..(o + 1) * din];
            let dwr = &mut dw[o * din..(o + 1) * din];
            for i in 0..din {
                dwr[i] += g * xr[i];
                dxr[i] += g * wr[i];
            }
        }
    }
    dx
}

pub(crate) struct LnCache {
    /// Normalized rows before gain/bias, [rows, d].
    xhat: Vec<f64>,
    /// Reciprocal standard deviation per row.
    rstd: Vec<f64>,
}

/// Row-wise layer norm with learned gain and bias.
pub(crate) fn layernorm_fwd(
    x: &[f64],
    rows: usize,
    d: usize,
    p: &LayerNormParams,
) -> (Vec<f64>, LnCache) {
    let mut y = vec![0.0; rows * d];
    let mut xhat = vec![0.0; rows * d];
    let mut rstd = vec![0.0; rows];
    for t in 0..rows {
        let xr = &x[t * d..(t + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / libm::sqrt(var + LN_EPS);
        rstd[t] = r;
        for i in 0..d {
            let h = (xr[i] - mean) * r;
            xhat[t * d + i] = h;
            y[t * d + i] = p.gain[i] * h + p.bias[i];
        }
    }
    (y, LnCache { xhat, rstd })
}

pub(crate) fn layernorm_bwd(
    dy: &[f64],
    cache: &LnCache,
    p: &LayerNormParams,
    rows: usize,
    d: usize,
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; rows * d];
    for t in 0..rows {
        let dyr = &dy[t * d..(t + 1) * d];
        let xh = &cache.xhat[t * d..(t + 1) * d];
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for i in 0..d {
            dgain[i] += dyr[i] * xh[i];
            dbias[i] += dyr[i];
            let dxh = dyr[i] * p.gain[i];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[i];
        }
        let inv_d = 1.0 / d as f64;
        let r = cache.rstd[t];
        for i in 0..d {
            let dxh = dyr[i] * p.gain[i];
            dx[t * d + i] = r * (dxh - inv_d * sum_dxhat - xh[i] * inv_d * sum_dxhat_xhat);
        }
    }
    dx
}

pub(crate) struct FfnCache {
    /// Pre-activation of the first projection, [rows, ffn].
    pre: Vec<f64>,
    /// ReLU output, [rows, ffn].
    hidden: Vec<f64>,
}

pub(crate) fn ffn_fwd(
    x: &[f64],
    rows: usize,
    d: usize,
    ffn_dim: usize,
    p: &FfnParams,
) -> (Vec<f64>, FfnCache) {
    let pre = linear_fwd(x, rows, d, &p.w1, &p.b1, ffn_dim);
    let hidden: Vec<f64> = pre.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    let y = linear_fwd(&hidden, rows, ffn_dim, &p.w2, &p.b2, d);
    (y, FfnCache { pre, hidden })
}

pub(crate) fn ffn_bwd(
    x: &[f64],
    dy: &[f64],
    cache: &FfnCache,
    p: &FfnParams,
    rows: usize,
    d: usize,
    ffn_dim: usize,
    grads: &mut FfnParams,
) -> Vec<f64> {
    let mut dhidden =
        linear_bwd(&cache.hidden, dy, &p.w2, rows, ffn_dim, d, &mut grads.w2, &mut grads.b2);
    for (dh, &pre) in dhidden.iter_mut().zip(&cache.pre) {
        if pre <= 0.0 {
            *dh = 0.0;
        }
    }
    linear_bwd(x, &dhidden, &p.w1, rows, d, ffn_dim, &mut grads.w1, &mut grads.b1)
}

pub(crate) struct AttnCache {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention probabilities, [heads][tq][tk] flattened; masked entries 0.
    probs: Vec<f64>,
    /// Concatenated per-head context, [tq, d]; input of the output proj.
    ctx: Vec<f64>,
}

/// Multi-head scaled dot-product attention. `causal` masks query i from
/// keys j > i (used by decoder self-attention; requires tq == tk).
pub(crate) fn attention_fwd(
    q_in: &[f64],
    tq: usize,
    kv_in: &[f64],
    tk: usize,
    p: &AttentionParams,
    d: usize,
    heads: usize,
    causal: bool,
) -> (Vec<f64>, AttnCache) {
    let dh = d / heads;
    let scale = 1.0 / libm::sqrt(dh as f64);
    let q = linear_fwd(q_in, tq, d, &p.wq, &p.bq, d);
    let k = linear_fwd(kv_in, tk, d, &p.wk, &p.bk, d);
    let v = linear_fwd(kv_in, tk, d, &p.wv, &p.bv, d);

    let mut probs = vec![0.0; heads * tq * tk];
    let mut ctx = vec![0.0; tq * d];
    let mut scores = vec![0.0; tk];
    for h in 0..heads {
        let col = h * dh;
        for i in 0..tq {
            let limit = if causal { i + 1 } else { tk };
            let qr = &q[i * d + col..i * d + col + dh];
            for (j, s) in scores[..limit].iter_mut().enumerate() {
                *s = scale * dot(qr, &k[j * d + col..j * d + col + dh]);
            }
            // softmax over the allowed prefix
            let m = scores[..limit].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for s in scores[..limit].iter_mut() {
                *s = libm::exp(*s - m);
                z += *s;
            }
            let pr = &mut probs[(h * tq + i) * tk..(h * tq + i + 1) * tk];
            for j in 0..limit {
                pr[j] = scores[j] / z;
            }
            let cr = &mut ctx[i * d + col..i * d + col + dh];
            for j in 0..limit {
                let pij = pr[j];
                let vr = &v[j * d + col..j * d + col + dh];
                for c in 0..dh {
                    cr[c] += pij * vr[c];
                }
            }
        }
    }
    let out = linear_fwd(&ctx, tq, d, &p.wo, &p.bo, d);
    (out, AttnCache { q, k, v, probs, ctx })
}

/// Backward of `attention_fwd`; returns (d q_in, d kv_in).
pub(crate) fn attention_bwd(
    q_in: &[f64],
    tq: usize,
    kv_in: &[f64],
    tk: usize,
    cache: &AttnCache,
    p: &AttentionParams,
    d: usize,
    heads: usize,
    causal: bool,
    d_out: &[f64],
    grads: &mut AttentionParams,
) -> (Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / libm::sqrt(dh as f64);
    let dctx = linear_bwd(&cache.ctx, d_out, &p.wo, tq, d, d, &mut grads.wo, &mut grads.bo);

    let mut dq = vec![0.0; tq * d];
    let mut dk = vec![0.0; tk * d];
    let mut dv = vec![0.0; tk * d];
    let mut dprobs = vec![0.0; tk];
    for h in 0..heads {
        let col = h * dh;
        for i in 0..tq {
            let limit = if causal { i + 1 } else { tk };
            let pr = &cache.probs[(h * tq + i) * tk..(h * tq + i + 1) * tk];
            let dcr = &dctx[i * d + col..i * d + col + dh];
            // dprobs and dV
            for (j, dp) in dprobs[..limit].iter_mut().enumerate() {
                let vr = &cache.v[j * d + col..j * d + col + dh];
                *dp = dot(dcr, vr);
                let pij = pr[j];
                let dvr = &mut dv[j * d + col..j * d + col + dh];
                for c in 0..dh {
                    dvr[c] += pij * dcr[c];
                }
            }
            // softmax backward: ds_j = p_j (dp_j − Σ p dp)
            let mut inner = 0.0;
            for j in 0..limit {
                inner += pr[j] * dprobs[j];
            }
            let qr = &cache.q[i * d + col..i * d + col + dh];
            let dqr_base = i * d + col;
            for j in 0..limit {
                let ds = pr[j] * (dprobs[j] - inner) * scale;
                if ds == 0.0 {
                    continue;
                }
                let kr = &cache.k[j * d + col..j * d + col + dh];
                let dkr = &mut dk[j * d + col..j * d + col + dh];
                for c in 0..dh {
                    dq[dqr_base + c] += ds * kr[c];
                    dkr[c] += ds * qr[c];
                }
            }
        }
    }

    let dq_in = linear_bwd(q_in, &dq, &p.wq, tq, d, d, &mut grads.wq, &mut grads.bq);
    let mut dkv_in = linear_bwd(kv_in, &dk, &p.wk, tk, d, d, &mut grads.wk, &mut grads.bk);
    let dkv_v = linear_bwd(kv_in, &dv, &p.wv, tk, d, d, &mut grads.wv, &mut grads.bv);
    for (a, b) in dkv_in.iter_mut().zip(&dkv_v) {
        *a += b;
    }
    (dq_in, dkv_in)
}

/// Sinusoidal position encoding rows for positions 0..rows.
pub(crate) fn position_encoding(rows: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; rows * d];
    for t in 0..rows {
        for i in 0..d / 2 {
            let freq = libm::pow(10000.0, -(2.0 * i as f64) / d as f64);
            let angle = t as f64 * freq;
            pe[t * d + 2 * i] = libm::sin(angle);
            pe[t * d + 2 * i + 1] = libm::cos(angle);
        }
    }
    pe
}
