//! The causal self-attention next-item model.
//!
//! Layout per block (pre-LN residual):
//!
//! ```text
//! h  = x + Dropout(Attn(LN1(x)) Wo)
//! x' = h + Dropout(FFN(LN2(h)))        FFN(c) = Dropout(ReLU(c W1 + b1)) W2 + b2
//! ```
//!
//! The input is `E[item] + P[position]` followed by dropout, and the output
//! of the last block goes through a final layer norm. Attention projections
//! carry no bias. Positions index the left-padded array, so the most recent
//! item always sits at position `L - 1`.

mod checkpoint;
mod forward;
mod linalg;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use forward::{
    forward, forward_seq, relevance_scores, user_representation, ForwardOutput, SeqCache,
};
pub use params::{init_params, pca_projection, Block, ModelParams, Tensor};

pub(crate) use checkpoint::{read_tensors, write_tensors};
pub(crate) use forward::backward_seq;

pub const LAYER_NORM_EPS: f64 = 1e-8;

fn default_heads() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub hidden_size: usize,
    pub num_blocks: usize,
    #[serde(default = "default_heads")]
    pub num_heads: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
    /// Number of real items; filled from the corpus when zero.
    #[serde(default)]
    pub vocab_size: usize,
    /// Inner feed-forward width, `hidden_size` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ffn_size: Option<usize>,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 {
            return Err(Error::config("hidden_size must be positive"));
        }
        if self.num_heads == 0 || !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(Error::config(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if self.num_blocks == 0 {
            return Err(Error::config("num_blocks must be at least 1"));
        }
        if self.max_seq_len == 0 {
            return Err(Error::config("max_seq_len must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("dropout_rate must lie in [0, 1)"));
        }
        if self.vocab_size == 0 {
            return Err(Error::config("vocab_size must be positive"));
        }
        if self.ffn_size == Some(0) {
            return Err(Error::config("ffn_size must be positive"));
        }
        Ok(())
    }

    pub fn ffn(&self) -> usize {
        self.ffn_size.unwrap_or(self.hidden_size)
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }
}
