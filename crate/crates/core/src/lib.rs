//! Joint speech-unit/text language modeling at desk scale.
//!
//! The pipeline runs end to end: unit tokenization, mixed-modality sequence
//! construction, autoregressive training over a joint vocabulary,
//! modality-constrained generation, retrieval/perplexity/repetition metrics,
//! and downstream fine-tuning heads for cross-modal transfer tests.

pub mod corpus;
pub mod downstream;
pub mod eval;
pub mod model;
pub mod builder;
pub mod report;
pub mod sample;
pub mod subword;
pub mod vocab;
