//! Bias-corrected Adam and its on-disk sidecar.
//!
//! Sidecar layout: magic `SIMREC-OPTIM\x01`, u64 step, then the first-moment
//! tensors and the second-moment tensors in checkpoint tensor order, both in
//! the checkpoint tensor encoding.

use std::io::{Read, Write};

use super::TrainConfig;
use crate::binio;
use crate::error::{Error, Result};
use crate::net::{ModelParams, NetConfig};

pub const OPTIMIZER_MAGIC: &[u8] = b"SIMREC-OPTIM\x01";

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: ModelParams,
    pub second_moment: ModelParams,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        OptimizerState {
            step: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
        }
    }
}

pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut OptimizerState, cfg: &TrainConfig) {
    state.step += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let correction1 = 1.0 - b1.powi(state.step as i32);
    let correction2 = 1.0 - b2.powi(state.step as i32);
    let lr = cfg.learning_rate;
    let eps = cfg.adam_eps;
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.first_moment.tensors_mut())
        .zip(state.second_moment.tensors_mut());
    for (((p, g), m), v) in tensors {
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
            v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
            let m_hat = m.data[i] / correction1;
            let v_hat = v.data[i] / correction2;
            p.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    params.zero_padding_row();
}

pub fn write_optimizer_state<W: Write>(state: &OptimizerState, w: &mut W) -> Result<()> {
    binio::write_magic(w, OPTIMIZER_MAGIC)?;
    binio::write_u64(w, state.step)?;
    crate::net::write_tensors(w, &state.first_moment.tensors())?;
    crate::net::write_tensors(w, &state.second_moment.tensors())
}

pub fn read_optimizer_state<R: Read>(r: &mut R, config: &NetConfig) -> Result<OptimizerState> {
    binio::read_magic(r, OPTIMIZER_MAGIC)?;
    let step = binio::read_u64(r)?;
    let mut first_moment = ModelParams::zeros(config);
    let mut second_moment = ModelParams::zeros(config);
    crate::net::read_tensors(r, first_moment.tensors_mut())?;
    crate::net::read_tensors(r, second_moment.tensors_mut())?;
    binio::expect_eof(r).map_err(|_| Error::format("trailing bytes in optimizer state"))?;
    Ok(OptimizerState {
        step,
        first_moment,
        second_moment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_params, Tensor};

    fn setup() -> (ModelParams, TrainConfig) {
        let net = NetConfig {
            hidden_size: 4,
            num_blocks: 1,
            num_heads: 1,
            max_seq_len: 3,
            dropout_rate: 0.0,
            vocab_size: 3,
            ffn_size: None,
        };
        (init_params(&net, 0, None).unwrap(), TrainConfig::new(net))
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let (mut p, cfg) = setup();
        let before = p.clone();
        let mut st = OptimizerState::new(&p);
        adam_step(&mut p, &before.zeros_like(), &mut st, &cfg);
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut p, mut cfg) = setup();
        cfg.learning_rate = 0.1;
        let mut grads = p.zeros_like();
        grads.final_beta = Tensor::filled(&[4], 1.0);
        let before = p.final_beta.data.clone();
        let mut st = OptimizerState::new(&p);
        adam_step(&mut p, &grads, &mut st, &cfg);
        for (a, b) in p.final_beta.data.iter().zip(before) {
            assert!((a - b + 0.1).abs() < 1e-7);
        }
    }

    #[test]
    fn padding_row_stays_zero() {
        let (mut p, cfg) = setup();
        let mut grads = p.zeros_like();
        grads.item_embedding.data.fill(1.0);
        let mut st = OptimizerState::new(&p);
        adam_step(&mut p, &grads, &mut st, &cfg);
        assert!(p.item_embedding.row(0).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sidecar_round_trip() {
        let (mut p, cfg) = setup();
        let mut grads = p.zeros_like();
        grads.final_gamma = Tensor::filled(&[4], 0.5);
        let mut st = OptimizerState::new(&p);
        adam_step(&mut p, &grads, &mut st, &cfg);
        let mut buf = Vec::new();
        write_optimizer_state(&st, &mut buf).unwrap();
        let back = read_optimizer_state(&mut buf.as_slice(), &cfg.net).unwrap();
        assert_eq!(back.step, 1);
        assert_eq!(back.first_moment.final_gamma.data, vec![0.05f32 as f64; 4]);
    }
}
