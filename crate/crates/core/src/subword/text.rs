//! Text tokenization: normalization plus merge-based subwords over characters.
//!
//! Each word is tokenized independently with a leading word-boundary marker,
//! so merges never cross word boundaries and detokenization is unambiguous.

use super::pair_merge::{MergeModel, Piece, SubwordError};
use std::path::Path;

/// Marker prepended to the first character of every word.
pub const WORD_MARKER: char = '\u{2581}';

/// Lowercase, strip everything but `[a-z0-9']`, collapse whitespace.
pub fn normalize_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars().flat_map(|c| c.to_lowercase()) {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else if c.is_ascii_lowercase() || c.is_ascii_digit() || c == '\'' {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
    }
    out
}

fn word_symbols(word: &str) -> Vec<char> {
    std::iter::once(WORD_MARKER).chain(word.chars()).collect()
}

/// Merge-based subword model over characters with a word-boundary marker.
#[derive(Debug, Clone, PartialEq)]
pub struct TextSubwordModel {
    model: MergeModel<char>,
}

impl TextSubwordModel {
    /// Train on raw text lines. Lines are normalized and split into words;
    /// each word trains as its own sequence, which keeps merges word-internal.
    pub fn train(lines: &[String], vocab_size: usize) -> Result<Self, SubwordError> {
        let corpus: Vec<Vec<char>> = lines
            .iter()
            .flat_map(|line| {
                normalize_text(line)
                    .split(' ')
                    .filter(|w| !w.is_empty())
                    .map(word_symbols)
                    .collect::<Vec<_>>()
            })
            .collect();
        Ok(Self {
            model: MergeModel::train(&corpus, vocab_size)?,
        })
    }

    /// Encode normalized text. Characters outside the alphabet come back as
    /// [`Piece::Unknown`].
    pub fn encode(&self, text: &str) -> Vec<Piece> {
        let normalized = normalize_text(text);
        let mut out = Vec::new();
        for word in normalized.split(' ').filter(|w| !w.is_empty()) {
            out.extend(self.model.encode(&word_symbols(word)));
        }
        out
    }

    /// Inverse of [`TextSubwordModel::encode`] up to normalization.
    pub fn decode(&self, pieces: &[Piece]) -> Result<String, SubwordError> {
        let chars = self.model.decode(pieces)?;
        let mut out = String::with_capacity(chars.len());
        for c in chars {
            if c == WORD_MARKER {
                if !out.is_empty() {
                    out.push(' ');
                }
            } else {
                out.push(c);
            }
        }
        Ok(out)
    }

    pub fn vocab_len(&self) -> usize {
        self.model.vocab_len()
    }

    pub fn base_len(&self) -> usize {
        self.model.base_len()
    }

    /// Raw token surface, including the word marker, e.g. `▁how`.
    pub fn surface(&self, t: u32) -> &str {
        self.model.surface(t)
    }

    pub fn save(&self, path: &Path) -> Result<(), SubwordError> {
        self.model.save(path, "text")
    }

    pub fn load(path: &Path) -> Result<Self, SubwordError> {
        Ok(Self {
            model: MergeModel::load(path, "text")?,
        })
    }
}
