//! Model checkpoint container (little-endian):
//!
//! ```text
//! magic    "SIMREC-MODEL\x01"
//! u32      vocab_size, hidden_size, num_blocks, num_heads, max_seq_len, ffn width
//! f64      dropout_rate
//! u32      tensor count
//! tensors  u32 rank, rank x u32 dims, product(dims) x f32
//! ```
//!
//! Tensors follow [`ModelParams::tensors`] order. Values are stored as f32,
//! so a loaded model equals the saved one up to f32 rounding.

use std::io::{Read, Write};

use super::{ModelParams, NetConfig, Tensor};
use crate::binio;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8] = b"SIMREC-MODEL\x01";

pub(crate) fn write_tensors<W: Write>(w: &mut W, tensors: &[&Tensor]) -> Result<()> {
    binio::write_len(w, tensors.len())?;
    for t in tensors {
        binio::write_len(w, t.shape.len())?;
        for &dim in &t.shape {
            binio::write_len(w, dim)?;
        }
        for &x in &t.data {
            binio::write_f32(w, x as f32)?;
        }
    }
    Ok(())
}

/// Reads tensors into `into`, which fixes the expected shapes.
pub(crate) fn read_tensors<R: Read>(r: &mut R, into: Vec<&mut Tensor>) -> Result<()> {
    let count = binio::read_u32(r)? as usize;
    if count != into.len() {
        return Err(Error::format(format!(
            "expected {} tensors, found {count}",
            into.len()
        )));
    }
    for (k, t) in into.into_iter().enumerate() {
        let rank = binio::read_u32(r)? as usize;
        let shape = (0..rank)
            .map(|_| binio::read_u32(r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        if shape != t.shape {
            return Err(Error::format(format!(
                "tensor {k} has shape {shape:?}, expected {:?}",
                t.shape
            )));
        }
        for x in t.data.iter_mut() {
            *x = binio::read_f32(r)? as f64;
        }
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(params: &ModelParams, w: &mut W) -> Result<()> {
    let c = &params.config;
    binio::write_magic(w, CHECKPOINT_MAGIC)?;
    for v in [
        c.vocab_size,
        c.hidden_size,
        c.num_blocks,
        c.num_heads,
        c.max_seq_len,
        c.ffn(),
    ] {
        binio::write_len(w, v)?;
    }
    binio::write_f64(w, c.dropout_rate)?;
    write_tensors(w, &params.tensors())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<ModelParams> {
    binio::read_magic(r, CHECKPOINT_MAGIC)?;
    let mut header = [0usize; 6];
    for h in header.iter_mut() {
        *h = binio::read_u32(r)? as usize;
    }
    let [vocab_size, hidden_size, num_blocks, num_heads, max_seq_len, ffn] = header;
    let config = NetConfig {
        hidden_size,
        num_blocks,
        num_heads,
        max_seq_len,
        dropout_rate: binio::read_f64(r)?,
        vocab_size,
        ffn_size: (ffn != hidden_size).then_some(ffn),
    };
    config.validate()?;
    let mut params = ModelParams::zeros(&config);
    read_tensors(r, params.tensors_mut())?;
    binio::expect_eof(r)?;
    Ok(params)
}
