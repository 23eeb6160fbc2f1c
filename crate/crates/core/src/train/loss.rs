use crate::error::{Error, Result};
use crate::net::{backward_seq, forward_seq, ModelParams};
use crate::rng::Rng;
use crate::simtable::SimilarityTable;

use super::TrainBatch;

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub total: f64,
    pub bce: f64,
    pub similarity: f64,
    /// Number of supervised positions in the batch.
    pub positions: usize,
    pub grads: ModelParams,
}

/// log(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// BCE and similarity losses with exact gradients of
/// `(1 - λ) · bce + λ · similarity`.
///
/// Per-position terms are summed and then divided by the number of
/// sequences that carry at least one target, so rows of pure padding change
/// nothing. The similarity term of a position is the cross-entropy between
/// the target item's similarity row and the softmax of the scores over all
/// items `1..=|V|`; positions whose target row is empty contribute nothing.
/// Passing no table gives the plain BCE objective.
pub fn compute_loss(
    params: &ModelParams,
    batch: &TrainBatch,
    simtable: Option<&SimilarityTable>,
    lambda: f64,
    mut dropout: Option<&mut Rng>,
) -> Result<LossOutput> {
    let d = params.config.hidden_size;
    let vocab = params.config.vocab_size;
    let active = batch
        .mask
        .iter()
        .filter(|m| m.iter().any(|&v| v))
        .count();
    let norm = active.max(1) as f64;
    let w_bce = (1.0 - lambda) / norm;
    let w_sim = lambda / norm;

    let mut grads = params.zeros_like();
    let mut bce_sum = 0.0;
    let mut sim_sum = 0.0;
    let mut positions = 0;
    let mut logits = vec![0.0; vocab];
    let mut dlogits = vec![0.0; vocab];
    let emb = &params.item_embedding;

    for b in 0..batch.len() {
        if !batch.mask[b].iter().any(|&v| v) {
            continue;
        }
        let cache = forward_seq(params, &batch.inputs[b], dropout.as_deref_mut())?;
        let mut d_out = vec![0.0; cache.output.len()];
        let mut seq_bce = 0.0;
        let mut seq_sim = 0.0;
        for (t, &pos) in cache.positions.iter().enumerate() {
            if !batch.mask[b][pos] {
                continue;
            }
            positions += 1;
            let f = cache.hidden(t);
            let df = &mut d_out[t * d..(t + 1) * d];
            let target = batch.positives[b][pos] as usize;
            let negative = batch.negatives[b][pos] as usize;

            let r_pos: f64 = f.iter().zip(emb.row(target)).map(|(a, b)| a * b).sum();
            let r_neg: f64 = f.iter().zip(emb.row(negative)).map(|(a, b)| a * b).sum();
            seq_bce += softplus(-r_pos) + softplus(r_neg);
            let g_pos = w_bce * (sigmoid(r_pos) - 1.0);
            let g_neg = w_bce * sigmoid(r_neg);
            for i in 0..d {
                df[i] += g_pos * emb.row(target)[i] + g_neg * emb.row(negative)[i];
            }
            for (g, &x) in grads.item_embedding.row_mut(target).iter_mut().zip(f) {
                *g += g_pos * x;
            }
            for (g, &x) in grads.item_embedding.row_mut(negative).iter_mut().zip(f) {
                *g += g_neg * x;
            }

            let row = match simtable {
                Some(table) => table.row(target as u32),
                None => &[],
            };
            if row.is_empty() {
                continue;
            }
            let mut max = f64::NEG_INFINITY;
            for (i, z) in logits.iter_mut().enumerate() {
                *z = f.iter().zip(emb.row(i + 1)).map(|(a, b)| a * b).sum();
                max = max.max(*z);
            }
            let sum_exp: f64 = logits.iter().map(|z| (z - max).exp()).sum();
            let lse = max + sum_exp.ln();
            let mut expected = 0.0;
            for (i, g) in dlogits.iter_mut().enumerate() {
                *g = (logits[i] - lse).exp();
            }
            for &(j, p) in row {
                expected += p * logits[j as usize - 1];
                dlogits[j as usize - 1] -= p;
            }
            seq_sim += lse - expected;
            for (i, &g) in dlogits.iter().enumerate() {
                let g = w_sim * g;
                let e = emb.row(i + 1);
                for k in 0..d {
                    df[k] += g * e[k];
                }
                for (o, &x) in grads.item_embedding.row_mut(i + 1).iter_mut().zip(f) {
                    *o += g * x;
                }
            }
        }
        if !seq_bce.is_finite() || !seq_sim.is_finite() || d_out.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure { batch_index: b });
        }
        bce_sum += seq_bce;
        sim_sum += seq_sim;
        backward_seq(params, &cache, &d_out, &mut grads);
    }
    grads.zero_padding_row();
    let bce = bce_sum / norm;
    let similarity = sim_sum / norm;
    Ok(LossOutput {
        total: (1.0 - lambda) * bce + lambda * similarity,
        bce,
        similarity,
        positions,
        grads,
    })
}
