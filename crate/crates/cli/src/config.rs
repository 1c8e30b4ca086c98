//! Layered run configuration: TOML file under environment under flags.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;
use unitext::corpus::SynthSpec;
use unitext::model::TrainConfig;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TokenizerCfg {
    pub vocab_size_units: usize,
    pub vocab_size_text: usize,
}

impl Default for TokenizerCfg {
    fn default() -> Self {
        Self {
            vocab_size_units: 180,
            vocab_size_text: 150,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SplitCfg {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl Default for SplitCfg {
    fn default() -> Self {
        Self {
            train: 0.8,
            dev: 0.1,
            test: 0.1,
        }
    }
}

/// Architecture knobs; the vocabulary size always comes from the data.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ModelCfg {
    pub n_layers: usize,
    pub n_heads: usize,
    pub embed_dim: usize,
    pub ffn_dim: usize,
    pub dropout_prob: f64,
    pub max_seq_len: usize,
    pub tie_embeddings: bool,
}

impl Default for ModelCfg {
    fn default() -> Self {
        Self {
            n_layers: 4,
            n_heads: 4,
            embed_dim: 128,
            ffn_dim: 512,
            dropout_prob: 0.1,
            max_seq_len: 256,
            tie_embeddings: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct EvalCfg {
    pub cra_m: usize,
    pub pelm_n: usize,
    pub min_words: usize,
    pub prompt_words: usize,
    pub temperature: f64,
    pub nucleus_p: f64,
    pub max_new_tokens: usize,
    pub truncate_words: usize,
}

impl Default for EvalCfg {
    fn default() -> Self {
        Self {
            cra_m: 20,
            pelm_n: 50,
            min_words: 20,
            prompt_words: 10,
            temperature: 0.6,
            nucleus_p: 0.95,
            max_new_tokens: 60,
            truncate_words: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct FinetuneCfg {
    pub task_sentences: usize,
    pub n_classes: usize,
    pub sa_updates: u64,
    pub sa_lr: f64,
    pub sa_batch_size: usize,
    pub ner_updates: u64,
    pub ner_lr: f64,
    pub ner_tokens_per_batch: usize,
    pub beam: usize,
    pub eval_fraction: f64,
}

impl Default for FinetuneCfg {
    fn default() -> Self {
        Self {
            task_sentences: 600,
            n_classes: 3,
            sa_updates: 400,
            sa_lr: 1e-3,
            sa_batch_size: 16,
            ner_updates: 600,
            ner_lr: 1e-3,
            ner_tokens_per_batch: 1024,
            beam: 5,
            eval_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed for splitting, parameter init, training, and sampling.
    pub seed: u64,
    pub corpus: SynthSpec,
    pub tokenizer: TokenizerCfg,
    pub split: SplitCfg,
    pub model: ModelCfg,
    pub train: TrainConfig,
    pub eval: EvalCfg,
    pub finetune: FinetuneCfg,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            corpus: SynthSpec::default(),
            tokenizer: TokenizerCfg::default(),
            split: SplitCfg::default(),
            model: ModelCfg::default(),
            train: TrainConfig::default(),
            eval: EvalCfg::default(),
            finetune: FinetuneCfg::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let body = std::fs::read_to_string(p)
                    .with_context(|| format!("cannot read config {}", p.display()))?;
                toml::from_str(&body).with_context(|| format!("cannot parse config {}", p.display()))
            }
        }
    }

    /// Canonical serialization used for the reproducibility hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
