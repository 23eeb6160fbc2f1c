use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{adam_step, build_batch, compute_loss, lambda_at, OptimizerState, TrainConfig};
use crate::corpus::SplitCorpus;
use crate::error::{Error, Result};
use crate::net::{init_params, ModelParams};
use crate::rng;
use crate::simtable::{EmbeddingSet, SimilarityTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: usize,
    pub epoch: usize,
    pub lambda_value: f64,
    pub loss_total: f64,
    pub loss_bce: f64,
    pub loss_similarity: f64,
    pub grad_norm: f64,
    pub wallclock_ms: u64,
}

/// Receives per-step log entries and per-epoch checkpoints.
pub trait TrainObserver {
    fn on_step(&mut self, _entry: &TrainLogEntry) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _epoch: usize, _params: &ModelParams, _state: &OptimizerState) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Keeps every log entry in memory.
#[derive(Debug, Default)]
pub struct LogCollector {
    pub entries: Vec<TrainLogEntry>,
}

impl TrainObserver for LogCollector {
    fn on_step(&mut self, entry: &TrainLogEntry) -> Result<()> {
        self.entries.push(entry.clone());
        Ok(())
    }
}

/// Trains from a fresh initialisation (optionally seeded with item
/// embeddings). Without a similarity table the objective is plain BCE.
pub fn fit(
    split: &SplitCorpus,
    simtable: Option<&SimilarityTable>,
    cfg: &TrainConfig,
    init_embeddings: Option<&EmbeddingSet>,
    observer: &mut dyn TrainObserver,
) -> Result<ModelParams> {
    cfg.validate()?;
    let params = init_params(&cfg.net, cfg.seed, init_embeddings)?;
    fit_from(params, split, simtable, cfg, observer)
}

/// `epochs x ceil(users / batch_size)` Adam steps. Each epoch reshuffles
/// users and redraws negatives from streams keyed by the epoch; dropout masks
/// come from a stream keyed by the global step.
pub fn fit_from(
    mut params: ModelParams,
    split: &SplitCorpus,
    simtable: Option<&SimilarityTable>,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<ModelParams> {
    cfg.validate()?;
    let vocab = split.item_count();
    if params.config.vocab_size != vocab {
        return Err(Error::config(format!(
            "model vocabulary {} does not match corpus vocabulary {vocab}",
            params.config.vocab_size
        )));
    }
    if let Some(t) = simtable {
        if t.item_count() != vocab {
            return Err(Error::config(format!(
                "similarity table covers {} items, corpus has {vocab}",
                t.item_count()
            )));
        }
    }
    let users = split.users();
    let steps_per_epoch = users.len().div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    lambda_at(0, total_steps, cfg)?;

    let started = Instant::now();
    let mut state = OptimizerState::new(&params);
    let mut order: Vec<usize> = (0..users.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, rng::TAG_SHUFFLE, epoch as u64, 0));
        let mut neg_rng = rng::stream(cfg.seed, rng::TAG_NEGATIVE, epoch as u64, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let seqs: Vec<&[u32]> = chunk.iter().map(|&u| users[u].train.as_slice()).collect();
            let batch = build_batch(&seqs, cfg.net.max_seq_len, vocab, &mut neg_rng)?;
            let lambda = lambda_at(step, total_steps, cfg)?;
            let mut dropout_rng = rng::stream(cfg.seed, rng::TAG_DROPOUT, step as u64, 0);
            let out = compute_loss(&params, &batch, simtable, lambda, Some(&mut dropout_rng))?;
            let grad_norm = out.grads.squared_norm().sqrt();
            adam_step(&mut params, &out.grads, &mut state, cfg);
            if !params.is_finite() {
                return Err(Error::NumericalFailure { batch_index: 0 });
            }
            observer.on_step(&TrainLogEntry {
                step,
                epoch,
                lambda_value: lambda,
                loss_total: out.total,
                loss_bce: out.bce,
                loss_similarity: out.similarity,
                grad_norm,
                wallclock_ms: started.elapsed().as_millis() as u64,
            })?;
            step += 1;
        }
        let last = epoch + 1 == cfg.epochs;
        if cfg.checkpoint_every > 0 && ((epoch + 1) % cfg.checkpoint_every == 0 || last) {
            observer.on_checkpoint(epoch, &params, &state)?;
        }
    }
    Ok(params)
}
