//! Joint vocabulary over unit subwords, text subwords, and special tokens.
//!
//! IDs are laid out in contiguous ranges: specials first, then unit subwords,
//! then text subwords. Rebuilding from the same two subword models always
//! yields the identical assignment.

use crate::subword::pair_merge::Piece;
use crate::subword::{TextSubwordModel, UnitSubwordModel, WORD_MARKER};
use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("empty modality allow-set for {0:?}")]
    EmptyAllowSet(Modality),
    #[error("unknown special token {0:?}")]
    UnknownSpecial(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    Speech,
    Text,
}

impl Modality {
    pub fn other(self) -> Self {
        match self {
            Modality::Speech => Modality::Text,
            Modality::Text => Modality::Speech,
        }
    }
}

/// Per-ID modality tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenClass {
    Special,
    Speech,
    Text,
}

/// Core special tokens, in fixed ID order starting at 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Special {
    UnitOpen = 0,
    TextOpen = 1,
    UnitClose = 2,
    TextClose = 3,
    UnitToText = 4,
    TextToUnit = 5,
    Pad = 6,
    UnkUnit = 7,
    UnkChar = 8,
}

pub const CORE_SPECIALS: [&str; 9] = [
    "<U_EN>", "<T_EN>", "<EOU>", "<EOS>", "<U2T>", "<T2U>", "<PAD>", "<UNK_U>", "<UNK_C>",
];

impl Special {
    pub fn id(self) -> u32 {
        self as u32
    }

    pub fn opener(m: Modality) -> Special {
        match m {
            Modality::Speech => Special::UnitOpen,
            Modality::Text => Special::TextOpen,
        }
    }

    pub fn closer(m: Modality) -> Special {
        match m {
            Modality::Speech => Special::UnitClose,
            Modality::Text => Special::TextClose,
        }
    }

    /// Switch token inserted when changing from `from` to the other modality.
    pub fn switch(from: Modality) -> Special {
        match from {
            Modality::Speech => Special::UnitToText,
            Modality::Text => Special::TextToUnit,
        }
    }
}

/// Unified token table with disjoint ID ranges per kind.
#[derive(Debug, Clone, PartialEq)]
pub struct JointVocab {
    specials: Vec<String>,
    unit_surfaces: Vec<String>,
    text_surfaces: Vec<String>,
}

impl JointVocab {
    pub fn build(
        unit_model: &UnitSubwordModel,
        text_model: &TextSubwordModel,
        extra_specials: &[&str],
    ) -> Self {
        let mut specials: Vec<String> = CORE_SPECIALS.iter().map(|s| s.to_string()).collect();
        specials.extend(extra_specials.iter().map(|s| s.to_string()));
        let unit_surfaces = (0..unit_model.vocab_len() as u32)
            .map(|t| format!("S{}", unit_model.surface(t)))
            .collect();
        let text_surfaces = (0..text_model.vocab_len() as u32)
            .map(|t| text_model.surface(t).to_string())
            .collect();
        Self {
            specials,
            unit_surfaces,
            text_surfaces,
        }
    }

    pub fn size(&self) -> usize {
        self.specials.len() + self.unit_surfaces.len() + self.text_surfaces.len()
    }

    pub fn special(&self, s: Special) -> u32 {
        s.id()
    }

    pub fn extra_special(&self, name: &str) -> Result<u32, VocabError> {
        self.specials[CORE_SPECIALS.len()..]
            .iter()
            .position(|s| s == name)
            .map(|i| (CORE_SPECIALS.len() + i) as u32)
            .ok_or_else(|| VocabError::UnknownSpecial(name.to_string()))
    }

    pub fn unit_range(&self) -> Range<u32> {
        let start = self.specials.len() as u32;
        start..start + self.unit_surfaces.len() as u32
    }

    pub fn text_range(&self) -> Range<u32> {
        let start = (self.specials.len() + self.unit_surfaces.len()) as u32;
        start..start + self.text_surfaces.len() as u32
    }

    /// Global ID for a unit-subword piece; unknown units map to `<UNK_U>`.
    pub fn unit_id(&self, piece: Piece) -> u32 {
        match piece {
            Piece::Tok(t) => self.unit_range().start + t,
            Piece::Unknown => Special::UnkUnit.id(),
        }
    }

    /// Global ID for a text-subword piece; unknown characters map to `<UNK_C>`.
    pub fn text_id(&self, piece: Piece) -> u32 {
        match piece {
            Piece::Tok(t) => self.text_range().start + t,
            Piece::Unknown => Special::UnkChar.id(),
        }
    }

    /// Local subword token ID, if `id` is a unit or text subword.
    pub fn local_id(&self, id: u32) -> Option<(Modality, u32)> {
        if self.unit_range().contains(&id) {
            Some((Modality::Speech, id - self.unit_range().start))
        } else if self.text_range().contains(&id) {
            Some((Modality::Text, id - self.text_range().start))
        } else {
            None
        }
    }

    pub fn class(&self, id: u32) -> TokenClass {
        if (id as usize) < self.specials.len() {
            TokenClass::Special
        } else if self.unit_range().contains(&id) {
            TokenClass::Speech
        } else {
            debug_assert!(self.text_range().contains(&id), "id {id} out of vocab");
            TokenClass::Text
        }
    }

    /// Human-readable token string. Text subwords keep their word marker.
    pub fn token_string(&self, id: u32) -> &str {
        let id = id as usize;
        let ns = self.specials.len();
        let nu = self.unit_surfaces.len();
        if id < ns {
            &self.specials[id]
        } else if id < ns + nu {
            &self.unit_surfaces[id - ns]
        } else {
            &self.text_surfaces[id - ns - nu]
        }
    }

    /// Table-style rendering: specials by name, unit subwords as `S..`,
    /// text subwords with the word marker stripped.
    pub fn display_string(&self, id: u32) -> String {
        let raw = self.token_string(id);
        if self.class(id) == TokenClass::Text {
            raw.replace(WORD_MARKER, "")
        } else {
            raw.to_string()
        }
    }

    /// Allow-set for modality-constrained continuation: the modality's
    /// subwords plus its closer. Switch tokens stay excluded so a constrained
    /// continuation cannot hop back across modalities.
    pub fn modality_mask(&self, target: Modality) -> Result<ModalityMask, VocabError> {
        let mut allow = vec![false; self.size()];
        let range = match target {
            Modality::Speech => self.unit_range(),
            Modality::Text => self.text_range(),
        };
        if range.is_empty() {
            return Err(VocabError::EmptyAllowSet(target));
        }
        for id in range {
            allow[id as usize] = true;
        }
        let closer = Special::closer(target).id();
        allow[closer as usize] = true;
        Ok(ModalityMask {
            target,
            closer,
            allow,
        })
    }
}

/// Allow-set over the joint vocabulary for one target modality.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityMask {
    pub target: Modality,
    /// Closer of the target modality; the only special left allowed, so it
    /// can act as the stop symbol.
    pub closer: u32,
    allow: Vec<bool>,
}

impl ModalityMask {
    /// Custom allow-set; prefer [`JointVocab::modality_mask`] for the
    /// standard constrained-continuation masks.
    pub fn new(target: Modality, closer: u32, allow: Vec<bool>) -> Self {
        Self {
            target,
            closer,
            allow,
        }
    }

    pub fn allows(&self, id: u32) -> bool {
        self.allow[id as usize]
    }

    pub fn allow_slice(&self) -> &[bool] {
        &self.allow
    }

    pub fn allowed_count(&self) -> usize {
        self.allow.iter().filter(|&&b| b).count()
    }

    /// Mask that allows the entire vocabulary (scoring identity).
    pub fn allow_all(size: usize) -> Self {
        Self {
            target: Modality::Speech,
            closer: Special::UnitClose.id(),
            allow: vec![true; size],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subword::units::deduplicate;

    fn toy_models() -> (UnitSubwordModel, TextSubwordModel) {
        let unit_corpus: Vec<Vec<u32>> = (0..30)
            .map(|i| {
                deduplicate(&(0..20).map(|j| ((i * 3 + j) % 7) as u32).collect::<Vec<_>>()).unwrap()
            })
            .collect();
        let unit_model = UnitSubwordModel::train(&unit_corpus, 12).unwrap();
        let text_model =
            TextSubwordModel::train(&vec!["how are you".to_string(); 30], 14).unwrap();
        (unit_model, text_model)
    }

    #[test]
    fn ranges_are_disjoint_and_exhaustive() {
        let (u, t) = toy_models();
        let vocab = JointVocab::build(&u, &t, &[]);
        assert_eq!(vocab.unit_range().start, CORE_SPECIALS.len() as u32);
        assert_eq!(vocab.unit_range().end, vocab.text_range().start);
        assert_eq!(vocab.text_range().end, vocab.size() as u32);
        let mut counts = [0usize; 3];
        for id in 0..vocab.size() as u32 {
            match vocab.class(id) {
                TokenClass::Special => counts[0] += 1,
                TokenClass::Speech => counts[1] += 1,
                TokenClass::Text => counts[2] += 1,
            }
        }
        assert_eq!(counts, [9, u.vocab_len(), t.vocab_len()]);
    }

    #[test]
    fn rebuild_is_id_stable() {
        let (u, t) = toy_models();
        let a = JointVocab::build(&u, &t, &["<NE1>"]);
        let b = JointVocab::build(&u, &t, &["<NE1>"]);
        assert_eq!(a, b);
        assert_eq!(a.extra_special("<NE1>").unwrap(), 9);
        assert!(a.extra_special("<NE2>").is_err());
    }

    #[test]
    fn special_ids_are_fixed() {
        assert_eq!(Special::UnitOpen.id(), 0);
        assert_eq!(Special::TextOpen.id(), 1);
        assert_eq!(Special::UnitClose.id(), 2);
        assert_eq!(Special::TextClose.id(), 3);
        assert_eq!(Special::UnitToText.id(), 4);
        assert_eq!(Special::TextToUnit.id(), 5);
    }

    #[test]
    fn mask_excludes_switch_tokens_and_other_modality() {
        let (u, t) = toy_models();
        let vocab = JointVocab::build(&u, &t, &[]);
        let mask = vocab.modality_mask(Modality::Text).unwrap();
        assert!(!mask.allows(Special::UnitToText.id()));
        assert!(!mask.allows(Special::TextToUnit.id()));
        assert!(!mask.allows(Special::TextOpen.id()));
        assert!(mask.allows(Special::TextClose.id()));
        assert!(vocab.unit_range().all(|id| !mask.allows(id)));
        assert!(vocab.text_range().all(|id| mask.allows(id)));
        assert_eq!(mask.allowed_count(), t.vocab_len() + 1);
    }

    #[test]
    fn unknown_pieces_map_to_reserved_specials() {
        let (u, t) = toy_models();
        let vocab = JointVocab::build(&u, &t, &[]);
        assert_eq!(vocab.unit_id(Piece::Unknown), Special::UnkUnit.id());
        assert_eq!(vocab.text_id(Piece::Unknown), Special::UnkChar.id());
    }
}
