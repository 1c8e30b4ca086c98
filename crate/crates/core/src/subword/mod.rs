//! Subword tokenization over unit streams and text.
//!
//! Both tokenizers learn an ordered list of pair-merge rules from a training
//! corpus and share one engine; they differ only in their symbol alphabet
//! (raw unit IDs vs characters with a word-boundary marker).

pub mod pair_merge;
pub mod text;
pub mod units;

pub use pair_merge::{MergeModel, Piece, SubwordError, Symbol, TokenId};
pub use text::{normalize_text, TextSubwordModel, WORD_MARKER};
pub use units::{deduplicate, RateReport, UnitSubwordModel};
