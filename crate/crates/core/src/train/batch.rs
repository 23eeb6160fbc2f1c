use std::collections::HashSet;

use rand::Rng as _;

use crate::corpus::PAD;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Left-padded inputs with aligned positive and negative targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainBatch {
    pub inputs: Vec<Vec<u32>>,
    pub positives: Vec<Vec<u32>>,
    pub negatives: Vec<Vec<u32>>,
    pub mask: Vec<Vec<bool>>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Uniform draw from `1..=vocab_size` minus `history`, by rejection.
pub fn sample_negative(history: &HashSet<u32>, vocab_size: usize, rng: &mut Rng) -> Result<u32> {
    let covered = history
        .iter()
        .filter(|&&i| i != PAD && i as usize <= vocab_size)
        .count();
    if covered >= vocab_size {
        return Err(Error::HistoryCoversVocabulary);
    }
    loop {
        let item = rng.gen_range(1..=vocab_size as u32);
        if !history.contains(&item) {
            return Ok(item);
        }
    }
}

/// Turns training sequences into a batch: inputs `s[..n-1]`, positives
/// `s[1..]`, both truncated to the most recent `seq_len` steps and
/// left-padded, plus one fresh negative per valid position drawn outside the
/// sequence's item set.
pub fn build_batch(
    sequences: &[&[u32]],
    seq_len: usize,
    vocab_size: usize,
    rng: &mut Rng,
) -> Result<TrainBatch> {
    let mut batch = TrainBatch {
        inputs: Vec::with_capacity(sequences.len()),
        positives: Vec::with_capacity(sequences.len()),
        negatives: Vec::with_capacity(sequences.len()),
        mask: Vec::with_capacity(sequences.len()),
    };
    for seq in sequences {
        let mut inputs = vec![PAD; seq_len];
        let mut positives = vec![PAD; seq_len];
        let mut negatives = vec![PAD; seq_len];
        if seq.len() >= 2 {
            let history: HashSet<u32> = seq.iter().copied().collect();
            let steps = (seq.len() - 1).min(seq_len);
            let src_in = &seq[seq.len() - 1 - steps..seq.len() - 1];
            let src_pos = &seq[seq.len() - steps..];
            let offset = seq_len - steps;
            inputs[offset..].copy_from_slice(src_in);
            positives[offset..].copy_from_slice(src_pos);
            for neg in negatives[offset..].iter_mut() {
                *neg = sample_negative(&history, vocab_size, rng)?;
            }
        }
        batch.mask.push(positives.iter().map(|&p| p != PAD).collect());
        batch.inputs.push(inputs);
        batch.positives.push(positives);
        batch.negatives.push(negatives);
    }
    Ok(batch)
}
