//! Unit-stream tokenization: deduplication plus merge-based subwords.

use super::pair_merge::{MergeModel, Piece, SubwordError};
use crate::corpus::UnitStream;
use std::path::Path;

/// Collapse consecutive repeating units: `[13,13,15,80,80,80] -> [13,15,80]`.
///
/// Idempotent and length-non-increasing.
pub fn deduplicate(units: &[u32]) -> Result<Vec<u32>, SubwordError> {
    if units.is_empty() {
        return Err(SubwordError::EmptyInput);
    }
    let mut out = Vec::with_capacity(units.len());
    for &u in units {
        if out.last() != Some(&u) {
            out.push(u);
        }
    }
    Ok(out)
}

/// Merge-based subword model over deduplicated unit IDs.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitSubwordModel {
    model: MergeModel<u32>,
}

impl UnitSubwordModel {
    /// Train on deduplicated unit sequences.
    pub fn train(corpus: &[Vec<u32>], vocab_size: usize) -> Result<Self, SubwordError> {
        Ok(Self {
            model: MergeModel::train(corpus, vocab_size)?,
        })
    }

    /// Identity model over a fixed alphabet, useful for worked examples.
    pub fn identity(alphabet: &[u32]) -> Self {
        let corpus: Vec<Vec<u32>> = alphabet.iter().map(|&u| vec![u]).collect();
        // No pair ever repeats, so the merge list stays empty.
        Self {
            model: MergeModel::train(&corpus, alphabet.len() + 1).expect("non-empty alphabet"),
        }
    }

    /// Encode a deduplicated unit sequence. Units outside the base alphabet
    /// come back as [`Piece::Unknown`].
    pub fn encode(&self, dedup_units: &[u32]) -> Vec<Piece> {
        debug_assert!(
            dedup_units.windows(2).all(|w| w[0] != w[1]),
            "encode expects deduplicated input"
        );
        self.model.encode(dedup_units)
    }

    pub fn decode(&self, pieces: &[Piece]) -> Result<Vec<u32>, SubwordError> {
        self.model.decode(pieces)
    }

    pub fn vocab_len(&self) -> usize {
        self.model.vocab_len()
    }

    pub fn base_len(&self) -> usize {
        self.model.base_len()
    }

    /// Token surface such as `13` or `13_15`.
    pub fn surface(&self, t: u32) -> &str {
        self.model.surface(t)
    }

    pub fn expansion(&self, t: u32) -> &[u32] {
        self.model.expansion(t)
    }

    pub fn merge_count(&self) -> usize {
        self.model.merges().len()
    }

    pub fn save(&self, path: &Path) -> Result<(), SubwordError> {
        self.model.save(path, "units")
    }

    pub fn load(path: &Path) -> Result<Self, SubwordError> {
        Ok(Self {
            model: MergeModel::load(path, "units")?,
        })
    }
}

/// Tokens-per-second at each stage of the unit pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateReport {
    pub raw: f64,
    pub dedup: f64,
    pub subword: f64,
}

impl RateReport {
    pub fn is_monotone(&self) -> bool {
        self.raw >= self.dedup && self.dedup >= self.subword
    }
}

/// Average token rates over a corpus of streams under a trained model.
pub fn rate_report(streams: &[UnitStream], model: &UnitSubwordModel) -> RateReport {
    let mut secs = 0.0;
    let mut raw = 0usize;
    let mut dedup_n = 0usize;
    let mut sub = 0usize;
    for s in streams {
        secs += s.duration_secs();
        raw += s.units.len();
        let d = deduplicate(&s.units).expect("non-empty stream");
        dedup_n += d.len();
        sub += model.encode(&d).len();
    }
    RateReport {
        raw: raw as f64 / secs,
        dedup: dedup_n as f64 / secs,
        subword: sub as f64 / secs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize_corpus, SynthSpec};
    use proptest::prelude::*;

    #[test]
    fn dedup_collapses_runs() {
        assert_eq!(
            deduplicate(&[13, 13, 15, 80, 80, 80]).unwrap(),
            vec![13, 15, 80]
        );
    }

    #[test]
    fn dedup_singleton() {
        assert_eq!(deduplicate(&[7]).unwrap(), vec![7]);
    }

    #[test]
    fn dedup_no_adjacent_repeats_is_identity() {
        assert_eq!(deduplicate(&[1, 2, 1, 2]).unwrap(), vec![1, 2, 1, 2]);
    }

    #[test]
    fn dedup_rejects_empty() {
        assert!(deduplicate(&[]).is_err());
    }

    proptest! {
        #[test]
        fn dedup_idempotent_and_shrinking(units in proptest::collection::vec(0u32..20, 1..200)) {
            let once = deduplicate(&units).unwrap();
            prop_assert!(once.len() <= units.len());
            prop_assert!(once.windows(2).all(|w| w[0] != w[1]));
            prop_assert_eq!(deduplicate(&once).unwrap(), once.clone());
        }

        #[test]
        fn encode_decode_round_trip(units in proptest::collection::vec(0u32..12, 1..120)) {
            // Train on a corpus covering the whole alphabet.
            let mut corpus: Vec<Vec<u32>> = (0..40u32)
                .map(|i| (0..30).map(|j| (i * 13 + j * 7) % 12).collect())
                .collect();
            corpus.push((0..12).collect());
            let model = UnitSubwordModel::train(&corpus, 24).unwrap();
            let dedup = deduplicate(&units).unwrap();
            let pieces = model.encode(&dedup);
            prop_assert_eq!(model.decode(&pieces).unwrap(), dedup);
        }
    }

    #[test]
    fn subword_rate_strictly_below_dedup_on_synthetic_corpus() {
        let (_, corpus) = synthesize_corpus(&SynthSpec {
            vocabulary_size: 20,
            n_sentences: 150,
            sentence_length_range: (4, 12),
            ..SynthSpec::default()
        })
        .unwrap();
        let dedup_corpus: Vec<Vec<u32>> = corpus
            .iter()
            .map(|u| deduplicate(&u.stream.units).unwrap())
            .collect();
        let model = UnitSubwordModel::train(&dedup_corpus, 96 + 80).unwrap();
        assert!(model.merge_count() > 0);
        let streams: Vec<_> = corpus.iter().map(|u| u.stream.clone()).collect();
        let report = rate_report(&streams, &model);
        assert!(report.is_monotone(), "{report:?}");
        assert!(
            report.subword < report.dedup,
            "merges must compress: {report:?}"
        );
    }

    #[test]
    fn rate_report_identity_when_nothing_compresses() {
        let streams = vec![UnitStream {
            utterance_id: "u".into(),
            frame_rate_hz: 50.0,
            units: vec![1, 2, 3, 4, 5, 1, 2, 4, 3, 5],
        }];
        let model = UnitSubwordModel::identity(&[1, 2, 3, 4, 5]);
        let report = rate_report(&streams, &model);
        assert_eq!(report.raw, 50.0);
        assert_eq!(report.dedup, 50.0);
        assert_eq!(report.subword, 50.0);
    }

    #[test]
    fn dedup_rate_tracks_duplication_factor() {
        // units_per_phone = 2 repeats each unit 1..=3 times, mean 2, so the
        // deduplicated rate should be about half the raw rate.
        let (_, corpus) = synthesize_corpus(&SynthSpec {
            vocabulary_size: 30,
            units_per_phone: 2,
            n_sentences: 300,
            sentence_length_range: (6, 18),
            ..SynthSpec::default()
        })
        .unwrap();
        let mut raw = 0usize;
        let mut dedup_n = 0usize;
        for u in &corpus {
            raw += u.stream.units.len();
            dedup_n += deduplicate(&u.stream.units).unwrap().len();
        }
        let ratio = dedup_n as f64 / raw as f64;
        assert!((ratio - 0.5).abs() < 0.05 * 0.5 + 0.02, "ratio {ratio}");
    }

    #[test]
    fn retraining_reproduces_merges() {
        let corpus: Vec<Vec<u32>> = (0..60)
            .map(|i| (0..25).map(|j| ((i * 11 + j * 5) % 17) as u32).collect())
            .collect();
        let a = UnitSubwordModel::train(&corpus, 40).unwrap();
        let b = UnitSubwordModel::train(&corpus, 40).unwrap();
        assert_eq!(a, b);
    }
}
