//! Mixed-modality sequence construction.
//!
//! Four sequence formats share one special-token grammar:
//!
//! ```text
//! uLM  <U_EN> S12 S66 S17 S18 <EOU>
//! tLM  <T_EN> how are you <EOS>
//! CST  <U_EN> .. <EOU> <T_EN> .. <EOS>     (either order)
//! AST  <U_EN> S12 S66 <U2T> are you <EOS>  (chunks alternate at sampled
//!                                           word boundaries)
//! ```

use crate::corpus::AlignedUtterance;
use crate::subword::pair_merge::SubwordError;
use crate::subword::{deduplicate, TextSubwordModel, UnitSubwordModel};
use crate::vocab::{JointVocab, Modality, Special, TokenClass};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("utterance {0}: empty unit stream")]
    EmptyUnits(String),
    #[error("utterance {0}: missing transcript")]
    MissingTranscript(String),
    #[error("no internal boundary: utterance has a single word")]
    NoInternalBoundary,
    #[error("bad switch points {points:?} for {words} words")]
    BadSwitchPoints { points: Vec<usize>, words: usize },
    #[error(transparent)]
    Subword(#[from] SubwordError),
}

#[derive(Debug, Error)]
pub enum ShardError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed shard file: {0}")]
    Malformed(String),
}

/// Sequence format kind, also the on-disk format byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeqFormat {
    Ulm = 0,
    Tlm = 1,
    Cst = 2,
    Ast = 3,
}

impl SeqFormat {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(SeqFormat::Ulm),
            1 => Some(SeqFormat::Tlm),
            2 => Some(SeqFormat::Cst),
            3 => Some(SeqFormat::Ast),
            _ => None,
        }
    }
}

/// Per-token modality label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokLabel {
    Speech = 0,
    Text = 1,
    Special = 2,
}

impl TokLabel {
    fn from_bits(b: u8) -> Option<Self> {
        match b {
            0 => Some(TokLabel::Speech),
            1 => Some(TokLabel::Text),
            2 => Some(TokLabel::Special),
            _ => None,
        }
    }
}

/// Token-ID sequence plus format kind and per-token modality labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedSequence {
    pub format: SeqFormat,
    pub utterance_id: String,
    pub ids: Vec<u32>,
    pub labels: Vec<TokLabel>,
}

/// Grammar violations reported by [`SeqBuilder::validate`].
#[derive(Debug, Error, PartialEq)]
pub enum GrammarError {
    #[error("empty sequence")]
    Empty,
    #[error("position {0}: expected an opener")]
    BadOpener(usize),
    #[error("position {0}: token not allowed inside a {1:?} chunk")]
    WrongModality(usize, Modality),
    #[error("position {0}: switch token does not match chunk modality")]
    BadSwitch(usize),
    #[error("position {0}: empty chunk")]
    EmptyChunk(usize),
    #[error("position {0}: closer does not match chunk modality")]
    BadCloser(usize),
    #[error("sequence ends inside a block")]
    Unterminated,
    #[error("position {0}: modality label disagrees with vocabulary tag")]
    LabelMismatch(usize),
    #[error("{0:?} sequence has wrong shape: {1}")]
    WrongShape(SeqFormat, String),
}

/// Expected label for a token: unknown-unit counts as speech content and
/// unknown-char as text content, structural specials stay special.
fn expected_label(vocab: &JointVocab, id: u32) -> TokLabel {
    if id == Special::UnkUnit.id() {
        return TokLabel::Speech;
    }
    if id == Special::UnkChar.id() {
        return TokLabel::Text;
    }
    match vocab.class(id) {
        TokenClass::Special => TokLabel::Special,
        TokenClass::Speech => TokLabel::Speech,
        TokenClass::Text => TokLabel::Text,
    }
}

fn modality_label(m: Modality) -> TokLabel {
    match m {
        Modality::Speech => TokLabel::Speech,
        Modality::Text => TokLabel::Text,
    }
}

/// Draw the number of switching points for a `k`-word utterance and their
/// positions: `count = clamp(floor(N), 1, k-1)` with `N ~ Normal(k/10, 1)`,
/// then `count` distinct internal boundaries uniformly without replacement.
pub fn sample_switch_points<R: Rng>(k: usize, rng: &mut R) -> Result<Vec<usize>, BuildError> {
    if k < 2 {
        return Err(BuildError::NoInternalBoundary);
    }
    let normal = Normal::new(k as f64 / 10.0, 1.0).expect("valid normal");
    let n = normal.sample(rng).floor();
    let count = (n as i64).clamp(1, (k - 1) as i64) as usize;
    let mut boundaries: Vec<usize> = (1..k).collect();
    // Partial Fisher-Yates: the first `count` slots end up uniform.
    for i in 0..count {
        let j = rng.gen_range(i..boundaries.len());
        boundaries.swap(i, j);
    }
    let mut points = boundaries[..count].to_vec();
    points.sort_unstable();
    Ok(points)
}

/// Builds token sequences against one joint vocabulary.
pub struct SeqBuilder<'a> {
    pub unit_model: &'a UnitSubwordModel,
    pub text_model: &'a TextSubwordModel,
    pub vocab: &'a JointVocab,
}

impl<'a> SeqBuilder<'a> {
    pub fn new(
        unit_model: &'a UnitSubwordModel,
        text_model: &'a TextSubwordModel,
        vocab: &'a JointVocab,
    ) -> Self {
        Self {
            unit_model,
            text_model,
            vocab,
        }
    }

    /// Deduplicate and subword-encode a raw unit span into global IDs.
    pub fn encode_unit_span(&self, units: &[u32]) -> Result<Vec<u32>, BuildError> {
        let dedup = deduplicate(units)?;
        Ok(self
            .unit_model
            .encode(&dedup)
            .into_iter()
            .map(|p| self.vocab.unit_id(p))
            .collect())
    }

    /// Subword-encode words into global IDs.
    pub fn encode_words(&self, words: &[String]) -> Vec<u32> {
        let text = words.join(" ");
        self.text_model
            .encode(&text)
            .into_iter()
            .map(|p| self.vocab.text_id(p))
            .collect()
    }

    fn finish(&self, format: SeqFormat, utterance_id: &str, ids: Vec<u32>) -> MixedSequence {
        let labels = ids.iter().map(|&id| expected_label(self.vocab, id)).collect();
        MixedSequence {
            format,
            utterance_id: utterance_id.to_string(),
            ids,
            labels,
        }
    }

    pub fn build_ulm(&self, utt: &AlignedUtterance) -> Result<MixedSequence, BuildError> {
        if utt.stream.units.is_empty() {
            return Err(BuildError::EmptyUnits(utt.id().to_string()));
        }
        let mut ids = vec![Special::UnitOpen.id()];
        ids.extend(self.encode_unit_span(&utt.stream.units)?);
        ids.push(Special::UnitClose.id());
        Ok(self.finish(SeqFormat::Ulm, utt.id(), ids))
    }

    pub fn build_tlm(&self, utt: &AlignedUtterance) -> Result<MixedSequence, BuildError> {
        if utt.words.is_empty() {
            return Err(BuildError::MissingTranscript(utt.id().to_string()));
        }
        let mut ids = vec![Special::TextOpen.id()];
        ids.extend(self.encode_words(&utt.words));
        ids.push(Special::TextClose.id());
        Ok(self.finish(SeqFormat::Tlm, utt.id(), ids))
    }

    /// Concatenate the two unpaired forms. `first` is drawn uniformly when
    /// unspecified.
    pub fn build_cst<R: Rng>(
        &self,
        utt: &AlignedUtterance,
        first: Option<Modality>,
        rng: &mut R,
    ) -> Result<MixedSequence, BuildError> {
        if utt.words.is_empty() {
            return Err(BuildError::MissingTranscript(utt.id().to_string()));
        }
        let first = first.unwrap_or_else(|| {
            if rng.gen_bool(0.5) {
                Modality::Speech
            } else {
                Modality::Text
            }
        });
        let ulm = self.build_ulm(utt)?;
        let tlm = self.build_tlm(utt)?;
        let mut ids = Vec::with_capacity(ulm.ids.len() + tlm.ids.len());
        match first {
            Modality::Speech => {
                ids.extend(ulm.ids);
                ids.extend(tlm.ids);
            }
            Modality::Text => {
                ids.extend(tlm.ids);
                ids.extend(ulm.ids);
            }
        }
        Ok(self.finish(SeqFormat::Cst, utt.id(), ids))
    }

    /// Alternating speech-text with sampled switch points. `start` is drawn
    /// uniformly when unspecified.
    pub fn build_ast<R: Rng>(
        &self,
        utt: &AlignedUtterance,
        start: Option<Modality>,
        rng: &mut R,
    ) -> Result<MixedSequence, BuildError> {
        let points = sample_switch_points(utt.words.len(), rng)?;
        let start = start.unwrap_or_else(|| {
            if rng.gen_bool(0.5) {
                Modality::Speech
            } else {
                Modality::Text
            }
        });
        self.build_ast_at(utt, &points, start)
    }

    /// Alternating speech-text at explicit switch points (strictly increasing
    /// internal word boundaries).
    pub fn build_ast_at(
        &self,
        utt: &AlignedUtterance,
        switch_points: &[usize],
        start: Modality,
    ) -> Result<MixedSequence, BuildError> {
        let k = utt.words.len();
        let valid = !switch_points.is_empty()
            && switch_points.windows(2).all(|w| w[0] < w[1])
            && switch_points.iter().all(|&p| p >= 1 && p < k);
        if !valid {
            return Err(BuildError::BadSwitchPoints {
                points: switch_points.to_vec(),
                words: k,
            });
        }

        let mut edges = Vec::with_capacity(switch_points.len() + 2);
        edges.push(0);
        edges.extend_from_slice(switch_points);
        edges.push(k);

        let mut ids = vec![Special::opener(start).id()];
        let mut modality = start;
        for (c, span) in edges.windows(2).enumerate() {
            if c > 0 {
                ids.push(Special::switch(modality.other()).id());
            }
            let (from, to) = (span[0], span[1]);
            match modality {
                // Each speech chunk is deduplicated and subword-encoded
                // independently, so no token spans a switch point.
                Modality::Speech => {
                    ids.extend(self.encode_unit_span(utt.units_for_words(from, to))?)
                }
                Modality::Text => ids.extend(self.encode_words(&utt.words[from..to])),
            }
            modality = modality.other();
        }
        // `modality` has flipped past the last chunk; the closer matches the
        // last chunk's modality.
        ids.push(Special::closer(modality.other()).id());
        Ok(self.finish(SeqFormat::Ast, utt.id(), ids))
    }

    /// Check the special-token grammar, the per-token labels, and the shape
    /// expected for the sequence's format kind.
    pub fn validate(&self, seq: &MixedSequence) -> Result<(), GrammarError> {
        let vocab = self.vocab;
        if seq.ids.is_empty() {
            return Err(GrammarError::Empty);
        }
        if seq.labels.len() != seq.ids.len() {
            return Err(GrammarError::LabelMismatch(seq.labels.len().min(seq.ids.len())));
        }
        for (i, &id) in seq.ids.iter().enumerate() {
            if seq.labels[i] != expected_label(vocab, id) {
                return Err(GrammarError::LabelMismatch(i));
            }
        }

        struct Block {
            modality_first: Modality,
            switches: usize,
        }
        let mut blocks: Vec<Block> = Vec::new();
        let mut state: Option<(Modality, usize)> = None; // (chunk modality, chunk len)
        for (i, &id) in seq.ids.iter().enumerate() {
            let open = if id == Special::UnitOpen.id() {
                Some(Modality::Speech)
            } else if id == Special::TextOpen.id() {
                Some(Modality::Text)
            } else {
                None
            };
            match state {
                None => match open {
                    Some(m) => {
                        blocks.push(Block {
                            modality_first: m,
                            switches: 0,
                        });
                        state = Some((m, 0));
                    }
                    None => return Err(GrammarError::BadOpener(i)),
                },
                Some((modality, chunk_len)) => {
                    if id == Special::UnitToText.id() || id == Special::TextToUnit.id() {
                        if id != Special::switch(modality).id() {
                            return Err(GrammarError::BadSwitch(i));
                        }
                        if chunk_len == 0 {
                            return Err(GrammarError::EmptyChunk(i));
                        }
                        blocks.last_mut().unwrap().switches += 1;
                        state = Some((modality.other(), 0));
                    } else if id == Special::UnitClose.id() || id == Special::TextClose.id() {
                        if id != Special::closer(modality).id() {
                            return Err(GrammarError::BadCloser(i));
                        }
                        if chunk_len == 0 {
                            return Err(GrammarError::EmptyChunk(i));
                        }
                        state = None;
                    } else if expected_label(vocab, id) == modality_label(modality) {
                        state = Some((modality, chunk_len + 1));
                    } else {
                        return Err(GrammarError::WrongModality(i, modality));
                    }
                }
            }
        }
        if state.is_some() {
            return Err(GrammarError::Unterminated);
        }

        let shape_err = |msg: &str| GrammarError::WrongShape(seq.format, msg.to_string());
        match seq.format {
            SeqFormat::Ulm => {
                if blocks.len() != 1 || blocks[0].switches != 0 {
                    return Err(shape_err("must be a single switchless block"));
                }
                if blocks[0].modality_first != Modality::Speech {
                    return Err(shape_err("must be speech"));
                }
            }
            SeqFormat::Tlm => {
                if blocks.len() != 1 || blocks[0].switches != 0 {
                    return Err(shape_err("must be a single switchless block"));
                }
                if blocks[0].modality_first != Modality::Text {
                    return Err(shape_err("must be text"));
                }
            }
            SeqFormat::Cst => {
                if blocks.len() != 2 || blocks.iter().any(|b| b.switches != 0) {
                    return Err(shape_err("must be two switchless blocks"));
                }
                if blocks[0].modality_first == blocks[1].modality_first {
                    return Err(shape_err("blocks must differ in modality"));
                }
            }
            SeqFormat::Ast => {
                if blocks.len() != 1 {
                    return Err(shape_err("must be a single block"));
                }
                if blocks[0].switches == 0 {
                    return Err(shape_err("must switch at least once"));
                }
            }
        }
        Ok(())
    }

    /// Human-readable rendering with the Table-style token strings.
    pub fn render(&self, seq: &MixedSequence) -> String {
        seq.ids
            .iter()
            .map(|&id| self.vocab.display_string(id))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

const SHARD_MAGIC: &[u8; 8] = b"UTSHARD1";

/// Write sequences as length-prefixed ID arrays with a format-kind byte and a
/// packed 2-bit modality label per token.
pub fn write_shards(path: &Path, seqs: &[MixedSequence]) -> Result<(), ShardError> {
    let mut out = Vec::new();
    out.extend_from_slice(SHARD_MAGIC);
    out.extend_from_slice(&(seqs.len() as u32).to_le_bytes());
    for seq in seqs {
        out.push(seq.format as u8);
        let id_bytes = seq.utterance_id.as_bytes();
        out.extend_from_slice(&(id_bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(id_bytes);
        out.extend_from_slice(&(seq.ids.len() as u32).to_le_bytes());
        for &t in &seq.ids {
            out.extend_from_slice(&t.to_le_bytes());
        }
        let mut packed = vec![0u8; seq.ids.len().div_ceil(4)];
        for (i, &l) in seq.labels.iter().enumerate() {
            packed[i / 4] |= (l as u8) << ((i % 4) * 2);
        }
        out.extend_from_slice(&packed);
    }
    std::fs::write(path, out).map_err(|source| ShardError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_shards(path: &Path) -> Result<Vec<MixedSequence>, ShardError> {
    let data = std::fs::read(path).map_err(|source| ShardError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let bad = |msg: &str| ShardError::Malformed(msg.to_string());
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], ShardError> {
        let end = *pos + n;
        let slice = data.get(*pos..end).ok_or_else(|| bad("truncated file"))?;
        *pos = end;
        Ok(slice)
    };
    if take(&mut pos, 8)? != SHARD_MAGIC {
        return Err(bad("bad magic"));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut seqs = Vec::with_capacity(count);
    for _ in 0..count {
        let format =
            SeqFormat::from_byte(take(&mut pos, 1)?[0]).ok_or_else(|| bad("bad format byte"))?;
        let id_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let utterance_id = String::from_utf8(take(&mut pos, id_len)?.to_vec())
            .map_err(|_| bad("utterance id is not utf-8"))?;
        let n = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut ids = Vec::with_capacity(n);
        for chunk in take(&mut pos, n * 4)?.chunks_exact(4) {
            ids.push(u32::from_le_bytes(chunk.try_into().unwrap()));
        }
        let packed = take(&mut pos, n.div_ceil(4))?;
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let bits = (packed[i / 4] >> ((i % 4) * 2)) & 0b11;
            labels.push(TokLabel::from_bits(bits).ok_or_else(|| bad("bad label bits"))?);
        }
        seqs.push(MixedSequence {
            format,
            utterance_id,
            ids,
            labels,
        });
    }
    if pos != data.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(seqs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize_corpus, SynthSpec, UnitStream};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// The worked three-word utterance used across format tests.
    fn worked_example() -> (UnitSubwordModel, TextSubwordModel, AlignedUtterance) {
        let unit_model = UnitSubwordModel::identity(&[12, 17, 18, 19, 21, 66]);
        let text_model =
            TextSubwordModel::train(&vec!["how are you".to_string(); 100], 18).unwrap();
        let utt = AlignedUtterance {
            words: vec!["how".into(), "are".into(), "you".into()],
            boundaries: vec![3, 6, 9],
            stream: UnitStream {
                utterance_id: "ex".into(),
                frame_rate_hz: 50.0,
                units: vec![12, 12, 66, 17, 18, 18, 19, 21, 21],
            },
        };
        (unit_model, text_model, utt)
    }

    fn builder_env() -> (UnitSubwordModel, TextSubwordModel, JointVocab, AlignedUtterance) {
        let (u, t, utt) = worked_example();
        let vocab = JointVocab::build(&u, &t, &[]);
        (u, t, vocab, utt)
    }

    #[test]
    fn ulm_matches_worked_example() {
        let (u, t, vocab, utt) = builder_env();
        let b = SeqBuilder::new(&u, &t, &vocab);
        let seq = b.build_ulm(&utt).unwrap();
        assert_eq!(b.render(&seq), "<U_EN> S12 S66 S17 S18 S19 S21 <EOU>");
        b.validate(&seq).unwrap();
    }

    #[test]
    fn tlm_matches_worked_example() {
        let (u, t, vocab, utt) = builder_env();
        let b = SeqBuilder::new(&u, &t, &vocab);
        let seq = b.build_tlm(&utt).unwrap();
        assert_eq!(b.render(&seq), "<T_EN> how are you <EOS>");
        b.validate(&seq).unwrap();
    }

    #[test]
    fn cst_matches_worked_example_both_orders() {
        let (u, t, vocab, utt) = builder_env();
        let b = SeqBuilder::new(&u, &t, &vocab);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sf = b.build_cst(&utt, Some(Modality::Speech), &mut rng).unwrap();
        assert_eq!(
            b.render(&sf),
            "<U_EN> S12 S66 S17 S18 S19 S21 <EOU> <T_EN> how are you <EOS>"
        );
        let tf = b.build_cst(&utt, Some(Modality::Text), &mut rng).unwrap();
        assert_eq!(
            b.render(&tf),
            "<T_EN> how are you <EOS> <U_EN> S12 S66 S17 S18 S19 S21 <EOU>"
        );
        b.validate(&sf).unwrap();
        b.validate(&tf).unwrap();
    }

    #[test]
    fn ast_matches_worked_example_both_starts() {
        let (u, t, vocab, utt) = builder_env();
        let b = SeqBuilder::new(&u, &t, &vocab);
        let speech_first = b.build_ast_at(&utt, &[1], Modality::Speech).unwrap();
        assert_eq!(b.render(&speech_first), "<U_EN> S12 S66 <U2T> are you <EOS>");
        let text_first = b.build_ast_at(&utt, &[1], Modality::Text).unwrap();
        assert_eq!(b.render(&text_first), "<T_EN> how <T2U> S17 S18 S19 S21 <EOU>");
        b.validate(&speech_first).unwrap();
        b.validate(&text_first).unwrap();
    }

    #[test]
    fn single_unit_ulm_has_three_tokens() {
        let (u, t, vocab, _) = builder_env();
        let b = SeqBuilder::new(&u, &t, &vocab);
        let utt = AlignedUtterance {
            words: vec!["w".into()],
            boundaries: vec![1],
            stream: UnitStream {
                utterance_id: "one".into(),
                frame_rate_hz: 50.0,
                units: vec![12],
            },
        };
        assert_eq!(b.build_ulm(&utt).unwrap().ids.len(), 3);
    }

    #[test]
    fn validator_rejects_wrong_closer() {
        let (u, t, vocab, utt) = builder_env();
        let b = SeqBuilder::new(&u, &t, &vocab);
        let mut seq = b.build_ulm(&utt).unwrap();
        *seq.ids.last_mut().unwrap() = Special::TextClose.id();
        assert!(matches!(b.validate(&seq), Err(GrammarError::BadCloser(_))));
    }

    #[test]
    fn validator_rejects_cross_modal_token_without_switch() {
        let (u, t, vocab, utt) = builder_env();
        let b = SeqBuilder::new(&u, &t, &vocab);
        let tlm = b.build_tlm(&utt).unwrap();
        let text_token = tlm.ids[1];
        let mut seq = b.build_ulm(&utt).unwrap();
        seq.ids[2] = text_token;
        seq.labels[2] = TokLabel::Text;
        assert!(matches!(
            b.validate(&seq),
            Err(GrammarError::WrongModality(2, Modality::Speech))
        ));
    }

    #[test]
    fn validator_rejects_empty_chunk_and_label_mismatch() {
        let (u, t, vocab, utt) = builder_env();
        let b = SeqBuilder::new(&u, &t, &vocab);
        let mut seq = b.build_ast_at(&utt, &[1], Modality::Speech).unwrap();
        // Drop the chunk content between the opener and the switch token.
        seq.ids.drain(1..3);
        seq.labels.drain(1..3);
        assert!(matches!(b.validate(&seq), Err(GrammarError::EmptyChunk(1))));

        let mut seq = b.build_ulm(&utt).unwrap();
        seq.labels[1] = TokLabel::Text;
        assert!(matches!(b.validate(&seq), Err(GrammarError::LabelMismatch(1))));
    }

    #[test]
    fn switch_points_forced_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(sample_switch_points(2, &mut rng).unwrap(), vec![1]);
        assert!(matches!(
            sample_switch_points(1, &mut rng),
            Err(BuildError::NoInternalBoundary)
        ));
        let a = sample_switch_points(20, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_switch_points(20, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    /// Quadrature oracle for the clamped-floor-Normal switch count at k=20.
    #[test]
    fn switch_count_mean_matches_clamped_normal() {
        use statrs::distribution::{ContinuousCDF, Normal as StatNormal};
        let k = 20usize;
        let mu = k as f64 / 10.0;
        let normal = StatNormal::new(mu, 1.0).unwrap();
        let prob_of = |m: usize| -> f64 {
            if m == 1 {
                normal.cdf(2.0)
            } else if m == k - 1 {
                1.0 - normal.cdf((k - 1) as f64)
            } else {
                normal.cdf((m + 1) as f64) - normal.cdf(m as f64)
            }
        };
        let mut mean = 0.0;
        let mut second = 0.0;
        for m in 1..k {
            let p = prob_of(m);
            mean += m as f64 * p;
            second += (m * m) as f64 * p;
        }
        let sd = (second - mean * mean).sqrt();

        let n = 100_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut total = 0usize;
        for _ in 0..n {
            total += sample_switch_points(k, &mut rng).unwrap().len();
        }
        let sample_mean = total as f64 / n as f64;
        let tol = 3.0 * sd / (n as f64).sqrt();
        assert!(
            (sample_mean - mean).abs() < tol,
            "sample {sample_mean} vs oracle {mean} (tol {tol})"
        );
    }

    #[test]
    fn cst_random_order_is_balanced() {
        let (u, t, vocab, utt) = builder_env();
        let b = SeqBuilder::new(&u, &t, &vocab);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 10_000;
        let mut speech_first = 0usize;
        for _ in 0..n {
            let seq = b.build_cst(&utt, None, &mut rng).unwrap();
            if seq.ids[0] == Special::UnitOpen.id() {
                speech_first += 1;
            }
        }
        let frac = speech_first as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "speech-first fraction {frac}");
    }

    /// Built sequences always validate, and AST chunks reconstruct the full
    /// word sequence via the lexicon inverse.
    #[test]
    fn built_sequences_validate_and_ast_is_content_complete() {
        let spec = SynthSpec {
            vocabulary_size: 24,
            n_sentences: 250,
            sentence_length_range: (2, 14),
            ..SynthSpec::default()
        };
        let (lexicon, corpus) = synthesize_corpus(&spec).unwrap();
        let dedup_corpus: Vec<Vec<u32>> = corpus
            .iter()
            .map(|x| deduplicate(&x.stream.units).unwrap())
            .collect();
        let unit_model = UnitSubwordModel::train(&dedup_corpus, 96 + 60).unwrap();
        let lines: Vec<String> = corpus.iter().map(|x| x.words.join(" ")).collect();
        let text_model = TextSubwordModel::train(&lines, 100).unwrap();
        let vocab = JointVocab::build(&unit_model, &text_model, &[]);
        let b = SeqBuilder::new(&unit_model, &text_model, &vocab);
        let mut rng = ChaCha8Rng::seed_from_u64(3);

        for utt in &corpus {
            b.validate(&b.build_ulm(utt).unwrap()).unwrap();
            b.validate(&b.build_tlm(utt).unwrap()).unwrap();
            b.validate(&b.build_cst(utt, None, &mut rng).unwrap()).unwrap();
            let ast = match b.build_ast(utt, None, &mut rng) {
                Ok(seq) => seq,
                Err(BuildError::NoInternalBoundary) => continue,
                Err(e) => panic!("unexpected build error: {e}"),
            };
            b.validate(&ast).unwrap();

            // Labels alternate exactly at switch tokens and nowhere else.
            let mut current = None;
            for (i, &id) in ast.ids.iter().enumerate() {
                match ast.labels[i] {
                    TokLabel::Special => {
                        if id == Special::UnitToText.id() {
                            assert_eq!(current, Some(TokLabel::Speech));
                            current = Some(TokLabel::Text);
                        } else if id == Special::TextToUnit.id() {
                            assert_eq!(current, Some(TokLabel::Text));
                            current = Some(TokLabel::Speech);
                        }
                    }
                    label => {
                        if let Some(c) = current {
                            assert_eq!(label, c, "label changed without a switch at {i}");
                        }
                        current = Some(label);
                    }
                }
            }

            // Content completeness via the exact lexicon inverse.
            let mut words: Vec<String> = Vec::new();
            let mut span: Vec<u32> = Vec::new();
            let flush = |span: &mut Vec<u32>, words: &mut Vec<String>| {
                if !span.is_empty() {
                    words.extend(lexicon.transcribe(span).unwrap());
                    span.clear();
                }
            };
            for (i, &id) in ast.ids.iter().enumerate() {
                match ast.labels[i] {
                    TokLabel::Speech => {
                        let (m, local) = vocab.local_id(id).unwrap();
                        assert_eq!(m, Modality::Speech);
                        span.extend(unit_model.expansion(local));
                    }
                    TokLabel::Text => {
                        flush(&mut span, &mut words);
                        let (_, local) = vocab.local_id(id).unwrap();
                        let surface = text_model.surface(local);
                        if let Some(word) = surface.strip_prefix(crate::subword::WORD_MARKER) {
                            words.push(word.to_string());
                        } else {
                            words.last_mut().unwrap().push_str(surface);
                        }
                    }
                    TokLabel::Special => flush(&mut span, &mut words),
                }
            }
            assert_eq!(words, utt.words, "AST for {} loses content", utt.id());
        }
    }

    #[test]
    fn shard_round_trip() {
        let (u, t, vocab, utt) = builder_env();
        let b = SeqBuilder::new(&u, &t, &vocab);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seqs = vec![
            b.build_ulm(&utt).unwrap(),
            b.build_tlm(&utt).unwrap(),
            b.build_cst(&utt, None, &mut rng).unwrap(),
            b.build_ast_at(&utt, &[1, 2], Modality::Text).unwrap(),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.shard");
        write_shards(&path, &seqs).unwrap();
        let loaded = read_shards(&path).unwrap();
        assert_eq!(seqs, loaded);
    }
}
