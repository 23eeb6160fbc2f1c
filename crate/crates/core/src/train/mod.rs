//! The composite objective, its optimiser and the training loop.

mod adam;
mod batch;
mod fit;
mod loss;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::NetConfig;

pub use adam::{adam_step, read_optimizer_state, write_optimizer_state, OptimizerState, OPTIMIZER_MAGIC};
pub use batch::{build_batch, sample_negative, TrainBatch};
pub use fit::{fit, fit_from, LogCollector, TrainLogEntry, TrainObserver};
pub use loss::{compute_loss, LossOutput};

/// Shape of the λ schedule before the linear decay starts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSchedule {
    /// λ0 during warm-up, then linear decay towards zero.
    #[default]
    HoldThenDecay,
    /// 0 → λ0 during warm-up, then the same decay.
    RampThenDecay,
}

fn d_warmup() -> usize {
    1000
}
fn d_epochs() -> usize {
    210
}
fn d_batch() -> usize {
    128
}
fn d_lr() -> f64 {
    1e-3
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.98
}
fn d_eps() -> f64 {
    1e-8
}
fn d_checkpoint_every() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda0: f64,
    #[serde(default = "d_warmup")]
    pub warmup_steps: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "d_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "d_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub seed: u64,
    pub net: NetConfig,
    #[serde(default)]
    pub lambda_schedule: LambdaSchedule,
    /// Checkpoint cadence in epochs; 0 disables intermediate checkpoints.
    #[serde(default = "d_checkpoint_every")]
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn new(net: NetConfig) -> Self {
        TrainConfig {
            lambda0: 0.5,
            warmup_steps: d_warmup(),
            epochs: d_epochs(),
            batch_size: d_batch(),
            learning_rate: d_lr(),
            adam_beta1: d_beta1(),
            adam_beta2: d_beta2(),
            adam_eps: d_eps(),
            seed: 0,
            net,
            lambda_schedule: LambdaSchedule::default(),
            checkpoint_every: d_checkpoint_every(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda0) {
            return Err(Error::config("lambda0 must lie in [0, 1]"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps must be positive"));
        }
        self.net.validate()
    }
}

/// λ at `step` of a run with `total_steps` optimiser steps.
///
/// Hold-then-decay gives `λ0` for `step < W` and
/// `λ0 (T - step) / (T - W)` afterwards, so the last step sees
/// `λ0 / (T - W)`.
pub fn lambda_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> Result<f64> {
    let w = cfg.warmup_steps;
    if w >= total_steps {
        return Err(Error::config(format!(
            "warmup_steps {w} must be smaller than the {total_steps} total steps"
        )));
    }
    if step >= total_steps {
        return Err(Error::config(format!("step {step} is past the last step")));
    }
    let l0 = cfg.lambda0;
    Ok(if step < w {
        match cfg.lambda_schedule {
            LambdaSchedule::HoldThenDecay => l0,
            LambdaSchedule::RampThenDecay => l0 * (step as f64 / w as f64),
        }
    } else {
        (l0 * (total_steps - step) as f64 / (total_steps - w) as f64).min(l0)
    })
}
