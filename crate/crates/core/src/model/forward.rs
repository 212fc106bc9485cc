//! Forward pass, analytic backward pass, and the regularized training loss.
//!
//! Everything is f64 and written as explicit loops over small tensors; the
//! gradient of every parameter is exact, which the finite-difference tests
//! rely on.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

use super::{LossBreakdown, ModelError, ModelParams, TransformerConfig};

const RMS_EPS: f64 = 1e-6;
const ROPE_BASE: f64 = 10_000.0;

/// A batch of sequences with per-token loss masks. `loss_mask[b][t]` marks
/// token `t` as a prediction target (scored from the logits at `t - 1`);
/// position 0 is never scored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub token_ids: Vec<Vec<u32>>,
    pub loss_mask: Vec<Vec<bool>>,
}

impl Batch {
    /// Plain language-modeling batch: every position after the first is a
    /// target.
    pub fn causal(token_ids: Vec<Vec<u32>>) -> Self {
        let loss_mask = token_ids
            .iter()
            .map(|seq| {
                let mut m = vec![true; seq.len()];
                if let Some(first) = m.first_mut() {
                    *first = false;
                }
                m
            })
            .collect();
        Batch { token_ids, loss_mask }
    }
}

/// Gradient of `l_total` with respect to every parameter, in tensors shaped
/// like the parameters. `masked_positions` is the number of scored positions,
/// needed to re-weight micro-batches during gradient accumulation.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: ModelParams,
    pub masked_positions: usize,
}

/// Logits for each sequence, flattened `[seq_len * vocab_size]`. Causal:
/// logits at position t depend only on ids[0..=t].
pub fn forward(
    params: &ModelParams,
    config: &TransformerConfig,
    token_ids: &[Vec<u32>],
) -> Result<Vec<Vec<f64>>, ModelError> {
    config.validate()?;
    params.check_shapes(config)?;
    let mut out = Vec::with_capacity(token_ids.len());
    for seq in token_ids {
        validate_seq(seq, config)?;
        out.push(forward_seq(params, config, seq).logits);
    }
    Ok(out)
}

fn validate_seq(seq: &[u32], config: &TransformerConfig) -> Result<(), ModelError> {
    if seq.len() > config.max_seq_len {
        return Err(ModelError::SequenceTooLong { len: seq.len(), max: config.max_seq_len });
    }
    for &id in seq {
        if id as usize >= config.vocab_size {
            return Err(ModelError::IdOutOfRange { id, vocab_size: config.vocab_size });
        }
    }
    Ok(())
}

/// Cross-entropy plus optional KL penalty to a frozen reference, with exact
/// gradients for `l_total`. The reference receives no gradient.
pub fn loss_and_grads(
    params: &ModelParams,
    ref_params: Option<&ModelParams>,
    config: &TransformerConfig,
    batch: &Batch,
    beta: f64,
) -> Result<(LossBreakdown, Gradients), ModelError> {
    config.validate()?;
    params.check_shapes(config)?;
    if let Some(r) = ref_params {
        r.check_shapes(config)?;
    }
    if batch.token_ids.len() != batch.loss_mask.len() {
        return Err(ModelError::ShapeMismatch("mask batch size"));
    }
    let mut masked = 0usize;
    for (seq, mask) in batch.token_ids.iter().zip(&batch.loss_mask) {
        validate_seq(seq, config)?;
        if seq.len() != mask.len() {
            return Err(ModelError::ShapeMismatch("mask length"));
        }
        masked += mask.iter().skip(1).filter(|&&m| m).count();
    }
    if masked == 0 {
        return Err(ModelError::EmptyMask);
    }
    let inv_m = 1.0 / masked as f64;
    let use_kl = ref_params.is_some();

    let v = config.vocab_size;
    let mut grads = ModelParams::zeros(config);
    let mut l_ce = 0.0;
    let mut kl_term = 0.0;

    for (seq, mask) in batch.token_ids.iter().zip(&batch.loss_mask) {
        if seq.is_empty() {
            continue;
        }
        let cache = forward_seq(params, config, seq);
        let ref_logits =
            ref_params.map(|r| forward_seq(r, config, seq).logits);

        let t_len = seq.len();
        let mut dlogits = vec![0.0; t_len * v];
        let mut p = vec![0.0; v];
        let mut log_p = vec![0.0; v];
        for t in 1..t_len {
            if !mask[t] {
                continue;
            }
            let pos = t - 1;
            let row = &cache.logits[pos * v..(pos + 1) * v];
            softmax_row(row, &mut p, &mut log_p);
            let target = seq[t] as usize;
            l_ce -= log_p[target] * inv_m;

            let drow = &mut dlogits[pos * v..(pos + 1) * v];
            for i in 0..v {
                drow[i] += (p[i] - if i == target { 1.0 } else { 0.0 }) * inv_m;
            }

            if use_kl {
                let rrow = &ref_logits.as_ref().unwrap()[pos * v..(pos + 1) * v];
                let mut log_q = vec![0.0; v];
                let mut q = vec![0.0; v];
                softmax_row(rrow, &mut q, &mut log_q);
                let mut kl_pos = 0.0;
                for i in 0..v {
                    kl_pos += p[i] * (log_p[i] - log_q[i]);
                }
                kl_term += kl_pos * inv_m;
                let scale = beta * inv_m;
                for i in 0..v {
                    drow[i] += scale * p[i] * ((log_p[i] - log_q[i]) - kl_pos);
                }
            }
        }
        backward_seq(params, config, seq, &cache, &dlogits, &mut grads);
    }

    let l_total = l_ce + beta * kl_term;
    if !l_total.is_finite() {
        return Err(ModelError::NonFiniteLoss);
    }
    Ok((
        LossBreakdown { l_total, l_ce, kl_term, beta },
        Gradients { params: grads, masked_positions: masked },
    ))
}

fn softmax_row(row: &[f64], p: &mut [f64], log_p: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (i, &x) in row.iter().enumerate() {
        let e = math::exp(x - max);
        p[i] = e;
        sum += e;
    }
    let log_sum = math::ln(sum);
    for i in 0..row.len() {
        log_p[i] = row[i] - max - log_sum;
        p[i] /= sum;
    }
}

struct LayerCache {
    x_attn_in: Vec<f64>, // [T,d] residual entering the attention block
    attn_rstd: Vec<f64>,
    a_norm: Vec<f64>,
    q: Vec<f64>, // [T,d] after rotary encoding
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>, // [H,T,T]
    ctx: Vec<f64>,   // [T,d] heads concatenated, before output projection
    x_mlp_in: Vec<f64>,
    mlp_rstd: Vec<f64>,
    m_norm: Vec<f64>,
    gate: Vec<f64>, // [T,ff] pre-activation
    up: Vec<f64>,
    h: Vec<f64>, // silu(gate) * up
}

struct SeqCache {
    layers: Vec<LayerCache>,
    x_final: Vec<f64>,
    final_rstd: Vec<f64>,
    f_norm: Vec<f64>,
    logits: Vec<f64>,
}

fn forward_seq(params: &ModelParams, config: &TransformerConfig, seq: &[u32]) -> SeqCache {
    let t_len = seq.len();
    let d = config.d_model;
    let ff = config.d_ff;
    let heads = config.n_heads;
    let hd = config.head_dim();
    let scale = 1.0 / math::sqrt(hd as f64);

    let mut x = vec![0.0; t_len * d];
    for (t, &id) in seq.iter().enumerate() {
        x[t * d..(t + 1) * d].copy_from_slice(&params.embed.data[id as usize * d..(id as usize + 1) * d]);
    }

    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let x_attn_in = x.clone();
        let (a_norm, attn_rstd) = rmsnorm_fwd(&x, &layer.attn_norm.data, t_len, d);
        let mut q = matmul(&a_norm, &layer.wq.data, t_len, d, d);
        let mut k = matmul(&a_norm, &layer.wk.data, t_len, d, d);
        let v = matmul(&a_norm, &layer.wv.data, t_len, d, d);
        rope(&mut q, t_len, heads, hd, 1.0);
        rope(&mut k, t_len, heads, hd, 1.0);

        let mut probs = vec![0.0; heads * t_len * t_len];
        let mut ctx = vec![0.0; t_len * d];
        for h in 0..heads {
            let off = h * hd;
            for t in 0..t_len {
                let qr = &q[t * d + off..t * d + off + hd];
                let mut max = f64::NEG_INFINITY;
                let mut scores = vec![0.0; t + 1];
                for (s, score) in scores.iter_mut().enumerate() {
                    let kr = &k[s * d + off..s * d + off + hd];
                    let dot: f64 = qr.iter().zip(kr).map(|(a, b)| a * b).sum();
                    *score = dot * scale;
                    if *score > max {
                        max = *score;
                    }
                }
                let mut sum = 0.0;
                for score in scores.iter_mut() {
                    *score = math::exp(*score - max);
                    sum += *score;
                }
                let prow = &mut probs[h * t_len * t_len + t * t_len..][..t + 1];
                for (s, &e) in scores.iter().enumerate() {
                    prow[s] = e / sum;
                }
                let crow = &mut ctx[t * d + off..t * d + off + hd];
                for s in 0..=t {
                    let vr = &v[s * d + off..s * d + off + hd];
                    for (c, &vv) in crow.iter_mut().zip(vr) {
                        *c += prow[s] * vv;
                    }
                }
            }
        }
        let attn_out = matmul(&ctx, &layer.wo.data, t_len, d, d);
        for (xi, ai) in x.iter_mut().zip(&attn_out) {
            *xi += ai;
        }

        let x_mlp_in = x.clone();
        let (m_norm, mlp_rstd) = rmsnorm_fwd(&x, &layer.mlp_norm.data, t_len, d);
        let gate = matmul(&m_norm, &layer.w_gate.data, t_len, d, ff);
        let up = matmul(&m_norm, &layer.w_up.data, t_len, d, ff);
        let mut h_act = vec![0.0; t_len * ff];
        for i in 0..t_len * ff {
            h_act[i] = silu(gate[i]) * up[i];
        }
        let down = matmul(&h_act, &layer.w_down.data, t_len, ff, d);
        for (xi, di) in x.iter_mut().zip(&down) {
            *xi += di;
        }

        layers.push(LayerCache {
            x_attn_in,
            attn_rstd,
            a_norm,
            q,
            k,
            v,
            probs,
            ctx,
            x_mlp_in,
            mlp_rstd,
            m_norm,
            gate,
            up,
            h: h_act,
        });
    }

    let x_final = x.clone();
    let (f_norm, final_rstd) = rmsnorm_fwd(&x, &params.final_norm.data, t_len, d);
    let head = params.lm_head.as_ref().unwrap_or(&params.embed);
    let v_size = config.vocab_size;
    let mut logits = vec![0.0; t_len * v_size];
    for t in 0..t_len {
        let xr = &f_norm[t * d..(t + 1) * d];
        let lrow = &mut logits[t * v_size..(t + 1) * v_size];
        for (vocab, l) in lrow.iter_mut().enumerate() {
            let wr = &head.data[vocab * d..(vocab + 1) * d];
            *l = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
        }
    }

    SeqCache { layers, x_final, final_rstd, f_norm, logits }
}

fn backward_seq(
    params: &ModelParams,
    config: &TransformerConfig,
    seq: &[u32],
    cache: &SeqCache,
    dlogits: &[f64],
    grads: &mut ModelParams,
) {
    let t_len = seq.len();
    let d = config.d_model;
    let ff = config.d_ff;
    let heads = config.n_heads;
    let hd = config.head_dim();
    let v_size = config.vocab_size;
    let scale = 1.0 / math::sqrt(hd as f64);

    // head projection
    let head = params.lm_head.as_ref().unwrap_or(&params.embed);
    let tied = params.lm_head.is_none();
    let mut df_norm = vec![0.0; t_len * d];
    {
        let dhead = if tied { &mut grads.embed.data } else { &mut grads.lm_head.as_mut().unwrap().data };
        for t in 0..t_len {
            let xr = &cache.f_norm[t * d..(t + 1) * d];
            let dxr = &mut df_norm[t * d..(t + 1) * d];
            let dlrow = &dlogits[t * v_size..(t + 1) * v_size];
            for (vocab, &dl) in dlrow.iter().enumerate() {
                if dl == 0.0 {
                    continue;
                }
                let wr = &head.data[vocab * d..(vocab + 1) * d];
                let dwr = &mut dhead[vocab * d..(vocab + 1) * d];
                for i in 0..d {
                    dxr[i] += dl * wr[i];
                    dwr[i] += dl * xr[i];
                }
            }
        }
    }

    let mut dx = vec![0.0; t_len * d];
    rmsnorm_bwd(
        &cache.x_final,
        &params.final_norm.data,
        &cache.final_rstd,
        &df_norm,
        &mut dx,
        &mut grads.final_norm.data,
        t_len,
        d,
    );

    for (layer, lcache, lgrads) in params
        .layers
        .iter()
        .zip(&cache.layers)
        .zip(&mut grads.layers)
        .map(|((a, b), c)| (a, b, c))
        .rev()
    {
        // MLP block: x = x_mlp_in + w_down(silu(gate) * up)
        let ddown = dx.clone(); // gradient wrt block output flows to both branches
        let mut dh = vec![0.0; t_len * ff];
        matmul_bwd_x(&ddown, &layer.w_down.data, &mut dh, t_len, ff, d);
        matmul_bwd_w(&lcache.h, &ddown, &mut lgrads.w_down.data, t_len, ff, d);

        let mut dgate = vec![0.0; t_len * ff];
        let mut dup = vec![0.0; t_len * ff];
        for i in 0..t_len * ff {
            let s = silu(lcache.gate[i]);
            dup[i] = dh[i] * s;
            dgate[i] = dh[i] * lcache.up[i] * dsilu(lcache.gate[i]);
        }
        let mut dm_norm = vec![0.0; t_len * d];
        matmul_bwd_x(&dgate, &layer.w_gate.data, &mut dm_norm, t_len, d, ff);
        matmul_bwd_x(&dup, &layer.w_up.data, &mut dm_norm, t_len, d, ff);
        matmul_bwd_w(&lcache.m_norm, &dgate, &mut lgrads.w_gate.data, t_len, d, ff);
        matmul_bwd_w(&lcache.m_norm, &dup, &mut lgrads.w_up.data, t_len, d, ff);
        rmsnorm_bwd(
            &lcache.x_mlp_in,
            &layer.mlp_norm.data,
            &lcache.mlp_rstd,
            &dm_norm,
            &mut dx,
            &mut lgrads.mlp_norm.data,
            t_len,
            d,
        );

        // Attention block: x = x_attn_in + wo(ctx)
        let dattn_out = dx.clone();
        let mut dctx = vec![0.0; t_len * d];
        matmul_bwd_x(&dattn_out, &layer.wo.data, &mut dctx, t_len, d, d);
        matmul_bwd_w(&lcache.ctx, &dattn_out, &mut lgrads.wo.data, t_len, d, d);

        let mut dq = vec![0.0; t_len * d];
        let mut dk = vec![0.0; t_len * d];
        let mut dv = vec![0.0; t_len * d];
        for h in 0..heads {
            let off = h * hd;
            for t in 0..t_len {
                let prow = &lcache.probs[h * t_len * t_len + t * t_len..][..t + 1];
                let dctx_r = &dctx[t * d + off..t * d + off + hd];
                // dprobs and the softmax Jacobian
                let mut dprobs = vec![0.0; t + 1];
                for (s, dp) in dprobs.iter_mut().enumerate() {
                    let vr = &lcache.v[s * d + off..s * d + off + hd];
                    *dp = dctx_r.iter().zip(vr).map(|(a, b)| a * b).sum();
                }
                let dot: f64 = prow.iter().zip(&dprobs).map(|(p, dp)| p * dp).sum();
                for s in 0..=t {
                    let dscore = prow[s] * (dprobs[s] - dot);
                    let qr = &lcache.q[t * d + off..t * d + off + hd];
                    let kr = &lcache.k[s * d + off..s * d + off + hd];
                    for i in 0..hd {
                        dq[t * d + off + i] += dscore * kr[i] * scale;
                        dk[s * d + off + i] += dscore * qr[i] * scale;
                    }
                    let vslot = &mut dv[s * d + off..s * d + off + hd];
                    for (dvi, &dci) in vslot.iter_mut().zip(dctx_r) {
                        *dvi += prow[s] * dci;
                    }
                }
            }
        }
        // rotation is orthogonal: gradient passes through the inverse rotation
        rope(&mut dq, t_len, heads, hd, -1.0);
        rope(&mut dk, t_len, heads, hd, -1.0);

        let mut da_norm = vec![0.0; t_len * d];
        matmul_bwd_x(&dq, &layer.wq.data, &mut da_norm, t_len, d, d);
        matmul_bwd_x(&dk, &layer.wk.data, &mut da_norm, t_len, d, d);
        matmul_bwd_x(&dv, &layer.wv.data, &mut da_norm, t_len, d, d);
        matmul_bwd_w(&lcache.a_norm, &dq, &mut lgrads.wq.data, t_len, d, d);
        matmul_bwd_w(&lcache.a_norm, &dk, &mut lgrads.wk.data, t_len, d, d);
        matmul_bwd_w(&lcache.a_norm, &dv, &mut lgrads.wv.data, t_len, d, d);
        rmsnorm_bwd(
            &lcache.x_attn_in,
            &layer.attn_norm.data,
            &lcache.attn_rstd,
            &da_norm,
            &mut dx,
            &mut lgrads.attn_norm.data,
            t_len,
            d,
        );
    }

    for (t, &id) in seq.iter().enumerate() {
        let dst = &mut grads.embed.data[id as usize * d..(id as usize + 1) * d];
        for (g, &dxi) in dst.iter_mut().zip(&dx[t * d..(t + 1) * d]) {
            *g += dxi;
        }
    }
}

fn silu(x: f64) -> f64 {
    x / (1.0 + math::exp(-x))
}

fn dsilu(x: f64) -> f64 {
    let s = 1.0 / (1.0 + math::exp(-x));
    s * (1.0 + x * (1.0 - s))
}

/// y[T,out] = x[T,in] @ w[in,out]
fn matmul(x: &[f64], w: &[f64], t_len: usize, d_in: usize, d_out: usize) -> Vec<f64> {
    let mut y = vec![0.0; t_len * d_out];
    for t in 0..t_len {
        let xr = &x[t * d_in..(t + 1) * d_in];
        let yr = &mut y[t * d_out..(t + 1) * d_out];
        for (i, &xi) in xr.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let wr = &w[i * d_out..(i + 1) * d_out];
            for (yo, &wo) in yr.iter_mut().zip(wr) {
                *yo += xi * wo;
            }
        }
    }
    y
}

/// dx[T,in] += dy[T,out] @ w[in,out]^T
fn matmul_bwd_x(dy: &[f64], w: &[f64], dx: &mut [f64], t_len: usize, d_in: usize, d_out: usize) {
    for t in 0..t_len {
        let dyr = &dy[t * d_out..(t + 1) * d_out];
        let dxr = &mut dx[t * d_in..(t + 1) * d_in];
        for (i, dxi) in dxr.iter_mut().enumerate() {
            let wr = &w[i * d_out..(i + 1) * d_out];
            *dxi += dyr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

/// dw[in,out] += x[T,in]^T @ dy[T,out]
fn matmul_bwd_w(x: &[f64], dy: &[f64], dw: &mut [f64], t_len: usize, d_in: usize, d_out: usize) {
    for t in 0..t_len {
        let xr = &x[t * d_in..(t + 1) * d_in];
        let dyr = &dy[t * d_out..(t + 1) * d_out];
        for (i, &xi) in xr.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let dwr = &mut dw[i * d_out..(i + 1) * d_out];
            for (dwo, &dyo) in dwr.iter_mut().zip(dyr) {
                *dwo += xi * dyo;
            }
        }
    }
}

fn rmsnorm_fwd(x: &[f64], w: &[f64], t_len: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut y = vec![0.0; t_len * d];
    let mut rstd = vec![0.0; t_len];
    for t in 0..t_len {
        let xr = &x[t * d..(t + 1) * d];
        let ms: f64 = xr.iter().map(|v| v * v).sum::<f64>() / d as f64;
        let r = 1.0 / math::sqrt(ms + RMS_EPS);
        rstd[t] = r;
        let yr = &mut y[t * d..(t + 1) * d];
        for i in 0..d {
            yr[i] = xr[i] * w[i] * r;
        }
    }
    (y, rstd)
}

#[allow(clippy::too_many_arguments)]
fn rmsnorm_bwd(
    x: &[f64],
    w: &[f64],
    rstd: &[f64],
    dy: &[f64],
    dx: &mut [f64],
    dw: &mut [f64],
    t_len: usize,
    d: usize,
) {
    for t in 0..t_len {
        let xr = &x[t * d..(t + 1) * d];
        let dyr = &dy[t * d..(t + 1) * d];
        let r = rstd[t];
        let mut dot = 0.0;
        for i in 0..d {
            dot += dyr[i] * w[i] * xr[i];
            dw[i] += dyr[i] * xr[i] * r;
        }
        let coef = dot * r * r * r / d as f64;
        let dxr = &mut dx[t * d..(t + 1) * d];
        for i in 0..d {
            dxr[i] += dyr[i] * w[i] * r - xr[i] * coef;
        }
    }
}

/// Rotary position encoding applied in place; `sign = -1.0` applies the
/// inverse rotation (used for the backward pass).
fn rope(x: &mut [f64], t_len: usize, heads: usize, hd: usize, sign: f64) {
    let d = heads * hd;
    for t in 0..t_len {
        for h in 0..heads {
            let off = t * d + h * hd;
            for i in 0..hd / 2 {
                let theta = sign
                    * t as f64
                    * math::powf(ROPE_BASE, -((2 * i) as f64) / hd as f64);
                let (sin, cos) = (math::sin(theta), math::cos(theta));
                let a = x[off + 2 * i];
                let b = x[off + 2 * i + 1];
                x[off + 2 * i] = a * cos - b * sin;
                x[off + 2 * i + 1] = a * sin + b * cos;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn tiny_cfg() -> TransformerConfig {
        TransformerConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            d_ff: 16,
            vocab_size: 12,
            max_seq_len: 8,
            tie_embeddings: true,
        }
    }

    #[test]
    fn output_shape() {
        let cfg = tiny_cfg();
        let p = ModelParams::init(&cfg, 0);
        let logits = forward(&p, &cfg, &[vec![1, 2, 3], vec![4, 5]]).unwrap();
        assert_eq!(logits[0].len(), 3 * cfg.vocab_size);
        assert_eq!(logits[1].len(), 2 * cfg.vocab_size);
    }

    #[test]
    fn zero_params_uniform_softmax() {
        let cfg = tiny_cfg();
        let p = ModelParams::zeros(&cfg);
        let logits = forward(&p, &cfg, &[vec![0, 1, 2]]).unwrap();
        for &l in &logits[0] {
            assert_eq!(l, 0.0);
        }
    }

    #[test]
    fn causality() {
        let cfg = tiny_cfg();
        let p = ModelParams::init(&cfg, 7);
        let a = forward(&p, &cfg, &[vec![1, 2, 3, 4]]).unwrap();
        let b = forward(&p, &cfg, &[vec![1, 2, 3, 9]]).unwrap();
        let v = cfg.vocab_size;
        // logits at positions 0..3 must be unchanged
        for t in 0..3 {
            assert_eq!(&a[0][t * v..(t + 1) * v], &b[0][t * v..(t + 1) * v]);
        }
        assert_ne!(&a[0][3 * v..4 * v], &b[0][3 * v..4 * v]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let cfg = tiny_cfg();
        let p = ModelParams::init(&cfg, 3);
        let logits = forward(&p, &cfg, &[vec![1, 2, 3]]).unwrap();
        let v = cfg.vocab_size;
        let mut prob = vec![0.0; v];
        let mut logp = vec![0.0; v];
        for t in 0..3 {
            softmax_row(&logits[0][t * v..(t + 1) * v], &mut prob, &mut logp);
            let sum: f64 = prob.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn kl_zero_when_model_equals_reference() {
        let cfg = tiny_cfg();
        let p = ModelParams::init(&cfg, 11);
        let batch = Batch::causal(vec![vec![1, 2, 3, 4]]);
        let (loss, _) = loss_and_grads(&p, Some(&p), &cfg, &batch, 1.0).unwrap();
        assert!(loss.kl_term.abs() < 1e-12);
        assert!((loss.l_total - loss.l_ce).abs() < 1e-12);
    }

    #[test]
    fn beta_zero_total_equals_ce() {
        let cfg = tiny_cfg();
        let p = ModelParams::init(&cfg, 11);
        let r = ModelParams::init(&cfg, 13);
        let batch = Batch::causal(vec![vec![1, 2, 3, 4]]);
        let (loss, _) = loss_and_grads(&p, Some(&r), &cfg, &batch, 0.0).unwrap();
        assert_eq!(loss.l_total, loss.l_ce);
    }

    #[test]
    fn hand_computed_two_class_kl() {
        // P = (0.5, 0.5), Q = (0.25, 0.75):
        // KL = 0.5 ln 2 + 0.5 ln(2/3) ~ 0.143841
        let p = [0.5f64, 0.5];
        let q = [0.25f64, 0.75];
        let kl: f64 =
            p.iter().zip(&q).map(|(pi, qi)| pi * math::ln(pi / qi)).sum();
        assert!((kl - 0.5 * math::ln(2.0) - 0.5 * math::ln(2.0 / 3.0)).abs() < 1e-15);
        assert!((kl - 0.143841036).abs() < 1e-8);

        // reproduce via logits through the loss path: vocab 2, model/ref built
        // so the next-token distributions equal P and Q at the scored position
        let cfg = TransformerConfig {
            n_layers: 0,
            n_heads: 1,
            d_model: 2,
            d_ff: 2,
            vocab_size: 2,
            max_seq_len: 4,
            tie_embeddings: false,
        };
        let mut model = ModelParams::zeros(&cfg);
        let mut reference = ModelParams::zeros(&cfg);
        // zeros() zeroes the norm gains too; restore them so the final
        // normalization passes the hidden state through
        model.final_norm.data = vec![1.0, 1.0];
        reference.final_norm.data = vec![1.0, 1.0];
        // with zero embeddings, rmsnorm output is 0 -> logits 0 -> P uniform
        // reference: logits (ln 1, ln 3) scaled; build via lm_head on a
        // nonzero embedding instead
        model.embed.data = vec![1.0, 0.0, 1.0, 0.0];
        reference.embed.data = vec![1.0, 0.0, 1.0, 0.0];
        // normalized row for embed row [1,0]: rms = sqrt(0.5) -> y ~ (1.414.., 0)
        let y0 = 1.0 / math::sqrt((1.0 + RMS_EPS * 2.0) / 2.0);
        model.lm_head.as_mut().unwrap().data = vec![0.0, 0.0, 0.0, 0.0]; // logits (0,0) -> P=(0.5,0.5)
        let delta = math::ln(3.0) / y0;
        reference.lm_head.as_mut().unwrap().data = vec![0.0, 0.0, delta, 0.0]; // logits (0, ln3) -> Q=(0.25,0.75)
        let batch = Batch { token_ids: vec![vec![0, 1]], loss_mask: vec![vec![false, true]] };
        let (loss, _) = loss_and_grads(&model, Some(&reference), &cfg, &batch, 1.0).unwrap();
        assert!((loss.kl_term - kl).abs() < 1e-9, "kl_term {}", loss.kl_term);
    }

    #[test]
    fn empty_mask_rejected() {
        let cfg = tiny_cfg();
        let p = ModelParams::init(&cfg, 1);
        let batch = Batch { token_ids: vec![vec![1, 2]], loss_mask: vec![vec![false, false]] };
        assert!(matches!(
            loss_and_grads(&p, None, &cfg, &batch, 0.0),
            Err(ModelError::EmptyMask)
        ));
    }

    #[test]
    fn id_and_length_validation() {
        let cfg = tiny_cfg();
        let p = ModelParams::init(&cfg, 1);
        assert!(matches!(
            forward(&p, &cfg, &[vec![99]]),
            Err(ModelError::IdOutOfRange { .. })
        ));
        assert!(matches!(
            forward(&p, &cfg, &[vec![0; 9]]),
            Err(ModelError::SequenceTooLong { .. })
        ));
    }

    /// Central finite differences on every parameter of randomized tiny
    /// configs. Relative error must stay below 1e-4.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(2024);
        for trial in 0..6 {
            let cfg = TransformerConfig {
                n_layers: 1 + rng.below(2),
                n_heads: [1, 2][rng.below(2)],
                d_model: [4, 8][rng.below(2)],
                d_ff: [8, 12][rng.below(2)],
                vocab_size: 10,
                max_seq_len: 6,
                tie_embeddings: trial % 2 == 0,
            };
            let params = ModelParams::init(&cfg, 100 + trial as u64);
            let reference = ModelParams::init(&cfg, 200 + trial as u64);
            let ids: Vec<u32> = (0..5).map(|_| rng.below(10) as u32).collect();
            let batch = Batch::causal(vec![ids]);
            let beta = 0.7;
            check_grads(&params, Some(&reference), &cfg, &batch, beta);
        }
    }

    pub(crate) fn check_grads(
        params: &ModelParams,
        reference: Option<&ModelParams>,
        cfg: &TransformerConfig,
        batch: &Batch,
        beta: f64,
    ) {
        let (_, grads) = loss_and_grads(params, reference, cfg, batch, beta).unwrap();
        let eps = 1e-5;
        let flat = params.flatten();
        let gflat = grads.params.flatten();
        let mut worst = 0.0f64;
        for i in 0..flat.len() {
            let mut perturbed = params.clone();
            let mut pf = flat.clone();
            pf[i] += eps;
            perturbed.unflatten_into(&pf).unwrap();
            let (lp, _) = loss_and_grads(&perturbed, reference, cfg, batch, beta).unwrap();
            pf[i] -= 2.0 * eps;
            perturbed.unflatten_into(&pf).unwrap();
            let (lm, _) = loss_and_grads(&perturbed, reference, cfg, batch, beta).unwrap();
            let fd = (lp.l_total - lm.l_total) / (2.0 * eps);
            let denom = fd.abs().max(gflat[i].abs()).max(1e-6);
            let rel = (fd - gflat[i]).abs() / denom;
            if rel > worst {
                worst = rel;
            }
            assert!(
                rel < 1e-4,
                "param {i}: analytic {} vs fd {fd}, rel {rel}",
                gflat[i]
            );
        }
        let _ = worst;
    }
}
