//! Similarity-augmented sequential recommendation.
//!
//! The crate is organised around the pipeline it implements:
//!
//! * [`corpus`] ingests interaction logs, filters them and produces
//!   leave-one-out splits.
//! * [`simtable`] turns per-item title embeddings into sparse similarity
//!   distributions.
//! * [`net`] is the causal self-attention next-item model.
//! * [`train`] holds the composite BCE + similarity objective, its analytic
//!   gradients, Adam and the training loop.
//! * [`eval`] implements sampled-negative HR@K / NDCG@K evaluation,
//!   frequency-bucket reports and Welch's t-test.
//! * [`cli`] wires everything into the `simrec` binary.

pub mod binio;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod net;
pub mod rng;
pub mod simtable;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
