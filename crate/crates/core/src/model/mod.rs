//! Decoder-only autoregressive model over the joint vocabulary.
//!
//! The stack is a pre-layer-norm transformer with learned absolute positional
//! embeddings and optionally tied input/output embeddings. Forward, backward,
//! and the optimizer are written out explicitly; the backward pass is held to
//! a central-finite-difference oracle in the test suite.

mod adam;
mod backward;
mod checkpoint;
mod forward;
mod params;
mod scalar;
mod train;

pub use adam::{clip_global_norm, lr_at, AdamState};
pub use backward::backward;
pub(crate) use backward::backward_from_hidden;
pub(crate) use forward::forward_cache;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{
    forward_hidden, forward_logprobs, next_token_logits, nll_loss, nll_loss_terms,
    score_continuation, ContinuationScore, ForwardCache, TrainSequence,
};
pub use params::{LayerParams, ModelParams, NormParams};
pub use scalar::Scalar;
pub use train::{train, StepRecord, StreamSet, TrainOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("empty sequence")]
    EmptySequence,
    #[error("sequence length {len} exceeds max_seq_len {max}")]
    TooLong { len: usize, max: usize },
    #[error("token ID {id} out of vocabulary (size {vocab})")]
    IdOutOfVocab { id: u32, vocab: usize },
    #[error("training diverged at step {step}: non-finite loss")]
    Diverged { step: u64 },
    #[error("no training data")]
    NoData,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad checkpoint file: {0}")]
    BadCheckpoint(String),
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub embed_dim: usize,
    pub ffn_dim: usize,
    pub dropout_prob: f64,
    pub max_seq_len: usize,
    pub vocab_size: usize,
    pub tie_embeddings: bool,
    /// Padding token excluded from the loss, when the vocabulary has one.
    #[serde(default)]
    pub pad_id: Option<u32>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            n_heads: 4,
            embed_dim: 128,
            ffn_dim: 512,
            dropout_prob: 0.1,
            max_seq_len: 256,
            vocab_size: 0,
            tie_embeddings: true,
            pad_id: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(self.n_heads) {
            return Err(ModelError::BadConfig(format!(
                "embed_dim {} must be a positive multiple of n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(ModelError::BadConfig(format!(
                "dropout_prob {} outside [0,1)",
                self.dropout_prob
            )));
        }
        if self.n_layers == 0 || self.ffn_dim == 0 || self.max_seq_len == 0 || self.vocab_size == 0
        {
            return Err(ModelError::BadConfig("zero-sized dimension".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub grad_clip_norm: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub tokens_per_batch: usize,
    pub max_updates: u64,
    pub seed: u64,
    /// Expected token share for (speech-only, mixed, text-only) sources.
    pub source_mix: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.95,
            grad_clip_norm: 1.0,
            weight_decay: 0.1,
            warmup_steps: 100,
            tokens_per_batch: 1024,
            max_updates: 2000,
            seed: 1,
            source_mix: [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        for b in [self.adam_beta1, self.adam_beta2] {
            if !(0.0..1.0).contains(&b) {
                return Err(ModelError::BadConfig(format!("beta {b} outside (0,1)")));
            }
        }
        if self.grad_clip_norm <= 0.0 {
            return Err(ModelError::BadConfig("grad_clip_norm must be > 0".into()));
        }
        if (self.source_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9
            || self.source_mix.iter().any(|&w| w < 0.0)
        {
            return Err(ModelError::BadConfig(format!(
                "source_mix {:?} must be non-negative and sum to 1",
                self.source_mix
            )));
        }
        if self.tokens_per_batch == 0 {
            return Err(ModelError::BadConfig("tokens_per_batch must be > 0".into()));
        }
        Ok(())
    }
}
