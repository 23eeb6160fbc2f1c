use rand::Rng as _;

use super::linalg::{acc_at_b, axpy, dot, matmul, matmul_bt};
use super::{ModelParams, LAYER_NORM_EPS};
use crate::corpus::PAD;
use crate::error::{Error, Result};
use crate::rng::Rng;

struct LayerNormCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(x: &[f64], d: usize, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, LayerNormCache) {
    let n = x.len() / d;
    let mut y = vec![0.0; n * d];
    let mut xhat = vec![0.0; n * d];
    let mut rstd = vec![0.0; n];
    for t in 0..n {
        let row = &x[t * d..(t + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        rstd[t] = r;
        for i in 0..d {
            let h = (row[i] - mean) * r;
            xhat[t * d + i] = h;
            y[t * d + i] = gamma[i] * h + beta[i];
        }
    }
    (y, LayerNormCache { xhat, rstd })
}

fn layer_norm_backward(
    dy: &[f64],
    cache: &LayerNormCache,
    d: usize,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let n = dy.len() / d;
    let mut dx = vec![0.0; n * d];
    let mut dxhat = vec![0.0; d];
    for t in 0..n {
        let dyr = &dy[t * d..(t + 1) * d];
        let xh = &cache.xhat[t * d..(t + 1) * d];
        for i in 0..d {
            dgamma[i] += dyr[i] * xh[i];
            dbeta[i] += dyr[i];
            dxhat[i] = dyr[i] * gamma[i];
        }
        let sum: f64 = dxhat.iter().sum();
        let sum_xh: f64 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum();
        let scale = cache.rstd[t] / d as f64;
        for i in 0..d {
            dx[t * d + i] = scale * (d as f64 * dxhat[i] - sum - xh[i] * sum_xh);
        }
    }
    dx
}

/// Inverted dropout: entries are 0 or `1 / (1 - p)`. `None` means identity.
fn dropout_mask(len: usize, p: f64, rng: Option<&mut Rng>) -> Option<Vec<f64>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(
        (0..len)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect(),
    )
}

fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
    }
}

fn add_bias(x: &mut [f64], bias: &[f64]) {
    for row in x.chunks_mut(bias.len()) {
        row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
    }
}

fn col_sum_into(acc: &mut [f64], x: &[f64]) {
    for row in x.chunks(acc.len()) {
        acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
}

struct BlockCache {
    ln1: LayerNormCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    // per head, n x n, zero above the diagonal
    probs: Vec<Vec<f64>>,
    ctx: Vec<f64>,
    mask_att: Option<Vec<f64>>,
    ln2: LayerNormCache,
    c: Vec<f64>,
    u: Vec<f64>,
    mask_hidden: Option<Vec<f64>>,
    r: Vec<f64>,
    mask_out: Option<Vec<f64>>,
}

/// Activations of one sequence, kept for the backward pass.
///
/// Only non-padding positions are materialised: `positions[t]` is the index
/// in the left-padded array of the `t`-th real item and `output` holds one
/// `d`-row per real item.
pub struct SeqCache {
    pub positions: Vec<usize>,
    pub items: Vec<u32>,
    pub output: Vec<f64>,
    mask0: Option<Vec<f64>>,
    blocks: Vec<BlockCache>,
    final_ln: LayerNormCache,
}

impl SeqCache {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn hidden(&self, t: usize) -> &[f64] {
        let d = self.output.len() / self.positions.len().max(1);
        &self.output[t * d..(t + 1) * d]
    }
}

/// Runs one sequence through the network. Sequences shorter than
/// `max_seq_len` are treated as left-padded; index 0 is padding and is
/// masked out of attention keys. Dropout is active iff `dropout` is given.
pub fn forward_seq(params: &ModelParams, seq: &[u32], mut dropout: Option<&mut Rng>) -> Result<SeqCache> {
    let cfg = &params.config;
    let (d, f, big_l) = (cfg.hidden_size, cfg.ffn(), cfg.max_seq_len);
    if seq.len() > big_l {
        return Err(Error::SequenceTooLong { len: seq.len(), max: big_l });
    }
    let offset = big_l - seq.len();
    let mut positions = Vec::with_capacity(seq.len());
    let mut items = Vec::with_capacity(seq.len());
    for (p, &item) in seq.iter().enumerate() {
        if item as usize > cfg.vocab_size {
            return Err(Error::IndexOutOfRange { index: item, vocab: cfg.vocab_size });
        }
        if item != PAD {
            positions.push(offset + p);
            items.push(item);
        }
    }
    let n = positions.len();
    let p_drop = cfg.dropout_rate;

    let mut x = vec![0.0; n * d];
    for t in 0..n {
        let row = &mut x[t * d..(t + 1) * d];
        row.copy_from_slice(params.item_embedding.row(items[t] as usize));
        axpy(row, 1.0, params.positional_embedding.row(positions[t]));
    }
    let mask0 = dropout_mask(n * d, p_drop, dropout.as_deref_mut());
    apply_mask(&mut x, &mask0);

    let heads = cfg.num_heads;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for blk in &params.blocks {
        let (a, ln1) = layer_norm(&x, d, &blk.ln1_gamma.data, &blk.ln1_beta.data);
        let q = matmul(&a, &blk.w_query.data, n, d, d);
        let k = matmul(&a, &blk.w_key.data, n, d, d);
        let v = matmul(&a, &blk.w_value.data, n, d, d);
        let mut ctx = vec![0.0; n * d];
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let mut p = vec![0.0; n * n];
            for t in 0..n {
                let qt = &q[t * d..][cols.clone()];
                let row = &mut p[t * n..t * n + t + 1];
                for (j, s) in row.iter_mut().enumerate() {
                    *s = dot(qt, &k[j * d..][cols.clone()]) * scale;
                }
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    total += *s;
                }
                for s in row.iter_mut() {
                    *s /= total;
                }
                for j in 0..=t {
                    let w = p[t * n + j];
                    let (vj, out) = (&v[j * d..][cols.clone()], &mut ctx[t * d..][cols.clone()]);
                    axpy(out, w, vj);
                }
            }
            probs.push(p);
        }
        let mut att = matmul(&ctx, &blk.w_out.data, n, d, d);
        let mask_att = dropout_mask(n * d, p_drop, dropout.as_deref_mut());
        apply_mask(&mut att, &mask_att);
        let h1: Vec<f64> = x.iter().zip(&att).map(|(a, b)| a + b).collect();

        let (c, ln2) = layer_norm(&h1, d, &blk.ln2_gamma.data, &blk.ln2_beta.data);
        let mut u = matmul(&c, &blk.ffn_w1.data, n, d, f);
        add_bias(&mut u, &blk.ffn_b1.data);
        let mut r: Vec<f64> = u.iter().map(|&z| z.max(0.0)).collect();
        let mask_hidden = dropout_mask(n * f, p_drop, dropout.as_deref_mut());
        apply_mask(&mut r, &mask_hidden);
        let mut y = matmul(&r, &blk.ffn_w2.data, n, f, d);
        add_bias(&mut y, &blk.ffn_b2.data);
        let mask_out = dropout_mask(n * d, p_drop, dropout.as_deref_mut());
        apply_mask(&mut y, &mask_out);
        x = h1.iter().zip(&y).map(|(a, b)| a + b).collect();

        blocks.push(BlockCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            ctx,
            mask_att,
            ln2,
            c,
            u,
            mask_hidden,
            r,
            mask_out,
        });
    }
    let (output, final_ln) = layer_norm(&x, d, &params.final_gamma.data, &params.final_beta.data);
    Ok(SeqCache {
        positions,
        items,
        output,
        mask0,
        blocks,
        final_ln,
    })
}

/// Accumulates into `grads` the gradient of a scalar whose derivative with
/// respect to `cache.output` is `d_out`.
pub(crate) fn backward_seq(params: &ModelParams, cache: &SeqCache, d_out: &[f64], grads: &mut ModelParams) {
    let cfg = &params.config;
    let (d, f) = (cfg.hidden_size, cfg.ffn());
    let n = cache.len();
    if n == 0 {
        return;
    }
    let heads = cfg.num_heads;
    let dh = cfg.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let mut dx = layer_norm_backward(
        d_out,
        &cache.final_ln,
        d,
        &params.final_gamma.data,
        &mut grads.final_gamma.data,
        &mut grads.final_beta.data,
    );
    for ((blk, bc), g) in params
        .blocks
        .iter()
        .zip(&cache.blocks)
        .zip(grads.blocks.iter_mut())
        .rev()
    {
        // x_out = h1 + dropout(r W2 + b2)
        let mut dh1 = dx.clone();
        let mut dy = dx;
        apply_mask(&mut dy, &bc.mask_out);
        col_sum_into(&mut g.ffn_b2.data, &dy);
        acc_at_b(&mut g.ffn_w2.data, &bc.r, &dy, n, f, d);
        let mut dr = matmul_bt(&dy, &blk.ffn_w2.data, n, d, f);
        apply_mask(&mut dr, &bc.mask_hidden);
        for (g_u, &u) in dr.iter_mut().zip(&bc.u) {
            if u <= 0.0 {
                *g_u = 0.0;
            }
        }
        let du = dr;
        col_sum_into(&mut g.ffn_b1.data, &du);
        acc_at_b(&mut g.ffn_w1.data, &bc.c, &du, n, d, f);
        let dc = matmul_bt(&du, &blk.ffn_w1.data, n, f, d);
        let dln2 = layer_norm_backward(
            &dc,
            &bc.ln2,
            d,
            &blk.ln2_gamma.data,
            &mut g.ln2_gamma.data,
            &mut g.ln2_beta.data,
        );
        axpy(&mut dh1, 1.0, &dln2);

        // h1 = x_in + dropout(ctx Wo)
        let mut dx_in = dh1.clone();
        let mut datt = dh1;
        apply_mask(&mut datt, &bc.mask_att);
        acc_at_b(&mut g.w_out.data, &bc.ctx, &datt, n, d, d);
        let dctx = matmul_bt(&datt, &blk.w_out.data, n, d, d);

        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut dp = vec![0.0; n];
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let p = &bc.probs[h];
            for t in 0..n {
                let dct = &dctx[t * d..][cols.clone()];
                let mut weighted = 0.0;
                for j in 0..=t {
                    let pj = p[t * n + j];
                    dp[j] = dot(dct, &bc.v[j * d..][cols.clone()]);
                    weighted += pj * dp[j];
                    axpy(&mut dv[j * d..][cols.clone()], pj, dct);
                }
                for j in 0..=t {
                    let ds = p[t * n + j] * (dp[j] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    axpy(&mut dq[t * d..][cols.clone()], ds, &bc.k[j * d..][cols.clone()]);
                    axpy(&mut dk[j * d..][cols.clone()], ds, &bc.q[t * d..][cols.clone()]);
                }
            }
        }
        acc_at_b(&mut g.w_query.data, &bc.a, &dq, n, d, d);
        acc_at_b(&mut g.w_key.data, &bc.a, &dk, n, d, d);
        acc_at_b(&mut g.w_value.data, &bc.a, &dv, n, d, d);
        let mut da = matmul_bt(&dq, &blk.w_query.data, n, d, d);
        axpy(&mut da, 1.0, &matmul_bt(&dk, &blk.w_key.data, n, d, d));
        axpy(&mut da, 1.0, &matmul_bt(&dv, &blk.w_value.data, n, d, d));
        let dln1 = layer_norm_backward(
            &da,
            &bc.ln1,
            d,
            &blk.ln1_gamma.data,
            &mut g.ln1_gamma.data,
            &mut g.ln1_beta.data,
        );
        axpy(&mut dx_in, 1.0, &dln1);
        dx = dx_in;
    }
    apply_mask(&mut dx, &cache.mask0);
    for t in 0..n {
        let row = &dx[t * d..(t + 1) * d];
        axpy(grads.item_embedding.row_mut(cache.items[t] as usize), 1.0, row);
        axpy(grads.positional_embedding.row_mut(cache.positions[t]), 1.0, row);
    }
    grads.zero_padding_row();
}

/// Hidden states for a batch of left-padded sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub batch: usize,
    pub seq_len: usize,
    pub dim: usize,
    /// `batch x seq_len x dim`; zero at padded positions.
    pub hidden: Vec<f64>,
    /// `batch x seq_len`; true at non-padding positions.
    pub valid_mask: Vec<bool>,
}

impl ForwardOutput {
    pub fn at(&self, b: usize, t: usize) -> &[f64] {
        let start = (b * self.seq_len + t) * self.dim;
        &self.hidden[start..start + self.dim]
    }

    pub fn is_valid(&self, b: usize, t: usize) -> bool {
        self.valid_mask[b * self.seq_len + t]
    }
}

pub fn forward(
    params: &ModelParams,
    batch: &[Vec<u32>],
    train_mode: bool,
    mut rng: Option<&mut Rng>,
) -> Result<ForwardOutput> {
    let cfg = &params.config;
    let (big_l, d) = (cfg.max_seq_len, cfg.hidden_size);
    let mut hidden = vec![0.0; batch.len() * big_l * d];
    let mut valid_mask = vec![false; batch.len() * big_l];
    for (b, seq) in batch.iter().enumerate() {
        let dropout = if train_mode { rng.as_deref_mut() } else { None };
        let cache = forward_seq(params, seq, dropout)?;
        for (t, &pos) in cache.positions.iter().enumerate() {
            let start = (b * big_l + pos) * d;
            hidden[start..start + d].copy_from_slice(cache.hidden(t));
            valid_mask[b * big_l + pos] = true;
        }
    }
    Ok(ForwardOutput {
        batch: batch.len(),
        seq_len: big_l,
        dim: d,
        hidden,
        valid_mask,
    })
}

/// `r_i = <f, E_i>` for the given candidates, or for every item `1..=|V|`.
pub fn relevance_scores(hidden: &[f64], params: &ModelParams, candidates: Option<&[u32]>) -> Vec<f64> {
    match candidates {
        Some(c) => c
            .iter()
            .map(|&i| dot(hidden, params.item_embedding.row(i as usize)))
            .collect(),
        None => (1..=params.config.vocab_size)
            .map(|i| dot(hidden, params.item_embedding.row(i)))
            .collect(),
    }
}

/// Hidden state after the most recent `max_seq_len` items of `history`,
/// without dropout. An empty history yields the zero vector.
pub fn user_representation(params: &ModelParams, history: &[u32]) -> Result<Vec<f64>> {
    let big_l = params.config.max_seq_len;
    let recent = &history[history.len().saturating_sub(big_l)..];
    let cache = forward_seq(params, recent, None)?;
    Ok(match cache.len() {
        0 => vec![0.0; params.config.hidden_size],
        n => cache.hidden(n - 1).to_vec(),
    })
}
