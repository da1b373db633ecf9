//! Generative classification with masked language models.
//!
//! A small encoder is instruction-tuned through its MLM head with a mix of
//! Answer Token Prediction, MLM and dummy-MLM samples, then queried with
//! verbalizer-constrained single-pass prediction.

pub mod ablation;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod model;
pub mod objective;
pub mod report;
pub mod rng;
pub mod synth;
pub mod templating;
pub mod tokenizer;
pub mod train;
pub mod verbalizer;

pub use error::{Error, Result};
