//! Corpus ingestion and synthesis.
//!
//! Real data arrives as line-delimited manifests pairing a raw unit stream
//! with its word-aligned transcript. The synthetic generator builds a paired
//! corpus from a random lexicon whose word-to-unit mapping is known exactly,
//! so every downstream behavior can be checked against ground truth.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::path::Path;
use thiserror::Error;

/// Frame rate used for all synthesized streams, in frames per second.
pub const SYNTH_FRAME_RATE_HZ: f64 = 50.0;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("utterance {utterance_id}: {msg}")]
    Invariant { utterance_id: String, msg: String },
    #[error("invalid synthesis spec: {0}")]
    BadSpec(String),
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions([f64; 3]),
    #[error("cannot transcribe units: {0}")]
    Transcribe(String),
}

/// Frame-rate-stamped sequence of raw acoustic cluster IDs for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitStream {
    pub utterance_id: String,
    pub frame_rate_hz: f64,
    pub units: Vec<u32>,
}

impl UnitStream {
    pub fn duration_secs(&self) -> f64 {
        self.units.len() as f64 / self.frame_rate_hz
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.units.is_empty() {
            return Err(self.invariant("empty unit stream"));
        }
        if !(self.frame_rate_hz > 0.0) {
            return Err(self.invariant("frame_rate_hz must be positive"));
        }
        Ok(())
    }

    fn invariant(&self, msg: &str) -> CorpusError {
        CorpusError::Invariant {
            utterance_id: self.utterance_id.clone(),
            msg: msg.to_string(),
        }
    }
}

/// Words with per-word end-frame boundaries and the paired unit stream.
///
/// Boundaries are word-end frame indices with an implicit start at 0, so the
/// frame span of word `i` is `[boundaries[i-1], boundaries[i])`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedUtterance {
    pub words: Vec<String>,
    pub boundaries: Vec<usize>,
    pub stream: UnitStream,
}

impl AlignedUtterance {
    pub fn id(&self) -> &str {
        &self.stream.utterance_id
    }

    /// Frame span `[start, end)` of word `i`.
    pub fn word_span(&self, i: usize) -> (usize, usize) {
        let start = if i == 0 { 0 } else { self.boundaries[i - 1] };
        (start, self.boundaries[i])
    }

    /// Raw units covered by words `[from, to)`.
    pub fn units_for_words(&self, from: usize, to: usize) -> &[u32] {
        let start = if from == 0 { 0 } else { self.boundaries[from - 1] };
        let end = if to == 0 { 0 } else { self.boundaries[to - 1] };
        &self.stream.units[start..end]
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        self.stream.validate()?;
        let fail = |msg: String| CorpusError::Invariant {
            utterance_id: self.stream.utterance_id.clone(),
            msg,
        };
        if self.words.is_empty() {
            return Err(fail("no words".into()));
        }
        if self.words.iter().any(|w| w.is_empty()) {
            return Err(fail("empty word".into()));
        }
        if self.boundaries.len() != self.words.len() {
            return Err(fail(format!(
                "{} boundaries for {} words",
                self.boundaries.len(),
                self.words.len()
            )));
        }
        if self.boundaries[0] == 0 || self.boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(fail("boundaries not increasing".into()));
        }
        if *self.boundaries.last().unwrap() != self.stream.units.len() {
            return Err(fail(format!(
                "last boundary {} != unit count {}",
                self.boundaries.last().unwrap(),
                self.stream.units.len()
            )));
        }
        Ok(())
    }
}

/// Parameters for the synthetic paired corpus.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SynthSpec {
    /// Number of distinct words in the lexicon.
    pub vocabulary_size: usize,
    /// Size of the raw unit alphabet the lexicon draws from.
    pub unit_alphabet: usize,
    /// Mean duplication factor: each lexicon unit is repeated
    /// `1..=2*units_per_phone-1` times, uniformly.
    pub units_per_phone: usize,
    pub lexicon_seed: u64,
    pub sentence_seed: u64,
    pub n_sentences: usize,
    /// Inclusive range of words per sentence.
    pub sentence_length_range: (usize, usize),
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            vocabulary_size: 60,
            unit_alphabet: 96,
            units_per_phone: 2,
            lexicon_seed: 11,
            sentence_seed: 12,
            n_sentences: 2000,
            sentence_length_range: (4, 24),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.vocabulary_size == 0 {
            return Err(CorpusError::BadSpec("vocabulary_size must be > 0".into()));
        }
        if self.units_per_phone == 0 {
            return Err(CorpusError::BadSpec("units_per_phone must be > 0".into()));
        }
        if self.n_sentences == 0 {
            return Err(CorpusError::BadSpec("n_sentences must be > 0".into()));
        }
        let (lo, hi) = self.sentence_length_range;
        if lo == 0 || lo > hi {
            return Err(CorpusError::BadSpec(format!(
                "bad sentence_length_range ({lo}, {hi})"
            )));
        }
        if self.unit_alphabet < 6 {
            return Err(CorpusError::BadSpec(
                "unit_alphabet must be at least 6".into(),
            ));
        }
        Ok(())
    }
}

/// Fixed random word-to-unit mapping behind a synthetic corpus.
///
/// Entries are deduplication-stable (no adjacent repeats) and the alphabet is
/// partitioned into onset / middle / coda thirds: every entry starts with an
/// onset unit and ends with a coda unit, middles come from the middle third.
/// Adjacent words therefore never share edge units, and a concatenated
/// deduplicated stream splits unambiguously at onset units, which makes
/// [`Lexicon::transcribe`] an exact inverse of synthesis.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Lexicon {
    pub words: Vec<String>,
    pub entries: Vec<Vec<u32>>,
    pub unit_alphabet: usize,
}

impl Lexicon {
    pub fn generate(spec: &SynthSpec) -> Result<Self, CorpusError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.lexicon_seed);
        let k = spec.unit_alphabet as u32;
        let onset_end = k / 3;
        let middle_end = 2 * k / 3;

        let mut words = Vec::with_capacity(spec.vocabulary_size);
        let mut seen_words = HashSet::new();
        while words.len() < spec.vocabulary_size {
            let len = rng.gen_range(3..=8);
            let w: String = (0..len)
                .map(|_| (b'a' + rng.gen_range(0..26u8)) as char)
                .collect();
            if seen_words.insert(w.clone()) {
                words.push(w);
            }
        }

        let mut entries = Vec::with_capacity(spec.vocabulary_size);
        let mut seen_entries = HashSet::new();
        while entries.len() < spec.vocabulary_size {
            let len = rng.gen_range(2..=5usize);
            let mut e = Vec::with_capacity(len);
            e.push(rng.gen_range(0..onset_end));
            for _ in 0..len.saturating_sub(2) {
                loop {
                    let u = rng.gen_range(onset_end..middle_end);
                    if Some(&u) != e.last() {
                        e.push(u);
                        break;
                    }
                }
            }
            e.push(rng.gen_range(middle_end..k));
            if seen_entries.insert(e.clone()) {
                entries.push(e);
            }
        }

        Ok(Self {
            words,
            entries,
            unit_alphabet: spec.unit_alphabet,
        })
    }

    pub fn word_index(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }

    fn is_onset(&self, unit: u32) -> bool {
        unit < self.unit_alphabet as u32 / 3
    }

    /// Exact inverse mapping from a deduplicated unit sequence back to words.
    ///
    /// Fails if the sequence does not segment into lexicon entries, which is
    /// the expected outcome for malformed sampled streams.
    pub fn transcribe(&self, dedup_units: &[u32]) -> Result<Vec<String>, CorpusError> {
        if dedup_units.is_empty() {
            return Ok(Vec::new());
        }
        if !self.is_onset(dedup_units[0]) {
            return Err(CorpusError::Transcribe(format!(
                "stream does not start at a word onset (unit {})",
                dedup_units[0]
            )));
        }
        let by_entry: HashMap<&[u32], usize> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.as_slice(), i))
            .collect();
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=dedup_units.len() {
            if i == dedup_units.len() || self.is_onset(dedup_units[i]) {
                let span = &dedup_units[start..i];
                match by_entry.get(span) {
                    Some(&w) => out.push(self.words[w].clone()),
                    None => {
                        return Err(CorpusError::Transcribe(format!(
                            "no lexicon entry for unit span {span:?}"
                        )))
                    }
                }
                start = i;
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let body = serde_json::to_string_pretty(self).expect("lexicon serializes");
        std::fs::write(path, body).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let body = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&body).map_err(|e| CorpusError::Parse {
            line: 0,
            msg: e.to_string(),
        })
    }
}

/// Word indices of one sentence.
///
/// Sentences walk a ring over the lexicon: a uniform start index followed by
/// steps of +1 or +2 (mod vocabulary). Continuations are therefore strongly
/// predictable from their prompt, which the retrieval metrics rely on.
fn ring_sentence(rng: &mut ChaCha8Rng, vocab: usize, len: usize) -> Vec<usize> {
    let mut pos = rng.gen_range(0..vocab);
    let mut out = Vec::with_capacity(len);
    out.push(pos);
    for _ in 1..len {
        pos = (pos + rng.gen_range(1..=2usize)) % vocab;
        out.push(pos);
    }
    out
}

/// Synthesize a paired corpus with a lexicon derived from the same spec.
pub fn synthesize_corpus(
    spec: &SynthSpec,
) -> Result<(Lexicon, Vec<AlignedUtterance>), CorpusError> {
    let lexicon = Lexicon::generate(spec)?;
    let corpus = synthesize_with_lexicon(spec, &lexicon)?;
    Ok((lexicon, corpus))
}

pub fn synthesize_with_lexicon(
    spec: &SynthSpec,
    lexicon: &Lexicon,
) -> Result<Vec<AlignedUtterance>, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.sentence_seed);
    let (lo, hi) = spec.sentence_length_range;
    let max_repeat = 2 * spec.units_per_phone - 1;
    let mut corpus = Vec::with_capacity(spec.n_sentences);
    for i in 0..spec.n_sentences {
        let len = rng.gen_range(lo..=hi);
        let word_ids = ring_sentence(&mut rng, spec.vocabulary_size, len);
        let mut units = Vec::new();
        let mut boundaries = Vec::with_capacity(len);
        for &w in &word_ids {
            for &u in &lexicon.entries[w] {
                let reps = rng.gen_range(1..=max_repeat);
                for _ in 0..reps {
                    units.push(u);
                }
            }
            boundaries.push(units.len());
        }
        let utt = AlignedUtterance {
            words: word_ids.iter().map(|&w| lexicon.words[w].clone()).collect(),
            boundaries,
            stream: UnitStream {
                utterance_id: format!("syn{i:05}"),
                frame_rate_hz: SYNTH_FRAME_RATE_HZ,
                units,
            },
        };
        debug_assert!(utt.validate().is_ok());
        corpus.push(utt);
    }
    Ok(corpus)
}

/// Deterministic whole-utterance split into train/dev/test.
pub fn split_corpus(
    corpus: &[AlignedUtterance],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<AlignedUtterance>, Vec<AlignedUtterance>, Vec<AlignedUtterance>), CorpusError> {
    let f = [fractions.0, fractions.1, fractions.2];
    if f.iter().any(|&x| x < 0.0) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadFractions(f));
    }
    let n = corpus.len();
    let mut counts = [0usize; 3];
    let mut remainders: Vec<(usize, f64)> = Vec::new();
    for (i, &fi) in f.iter().enumerate() {
        let exact = fi * n as f64;
        counts[i] = exact.floor() as usize;
        remainders.push((i, exact - exact.floor()));
    }
    let assigned: usize = counts.iter().sum();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for j in 0..n - assigned {
        counts[remainders[j % 3].0] += 1;
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let take = |range: std::ops::Range<usize>| -> Vec<AlignedUtterance> {
        order[range].iter().map(|&i| corpus[i].clone()).collect()
    };
    let train = take(0..counts[0]);
    let dev = take(counts[0]..counts[0] + counts[1]);
    let test = take(counts[0] + counts[1]..n);
    Ok((train, dev, test))
}

/// One manifest line. Field order is fixed on write.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    /// Space-separated words.
    pub words: String,
    /// Comma-separated word-end frame indices.
    pub boundaries: String,
    pub frame_rate_hz: f64,
    /// Space-separated unit IDs.
    pub units: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entities: Option<String>,
}

impl ManifestRecord {
    pub fn from_utterance(utt: &AlignedUtterance) -> Self {
        Self {
            id: utt.stream.utterance_id.clone(),
            words: utt.words.join(" "),
            boundaries: utt
                .boundaries
                .iter()
                .map(|b| b.to_string())
                .collect::<Vec<_>>()
                .join(","),
            frame_rate_hz: utt.stream.frame_rate_hz,
            units: utt
                .stream
                .units
                .iter()
                .map(|u| u.to_string())
                .collect::<Vec<_>>()
                .join(" "),
            label: None,
            entities: None,
        }
    }

    pub fn into_utterance(self, line: usize) -> Result<AlignedUtterance, CorpusError> {
        let parse_err = |msg: String| CorpusError::Parse { line, msg };
        let boundaries = self
            .boundaries
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| parse_err(format!("bad boundary: {e}")))?;
        let units = self
            .units
            .split_whitespace()
            .map(|s| s.parse::<u32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| parse_err(format!("bad unit: {e}")))?;
        let utt = AlignedUtterance {
            words: self.words.split_whitespace().map(String::from).collect(),
            boundaries,
            stream: UnitStream {
                utterance_id: self.id,
                frame_rate_hz: self.frame_rate_hz,
                units,
            },
        };
        utt.validate()?;
        Ok(utt)
    }
}

pub fn load_manifest_records(path: &Path) -> Result<Vec<ManifestRecord>, CorpusError> {
    let body = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut records = Vec::new();
    for (i, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

pub fn load_manifest(path: &Path) -> Result<Vec<AlignedUtterance>, CorpusError> {
    load_manifest_records(path)?
        .into_iter()
        .enumerate()
        .map(|(i, rec)| rec.into_utterance(i + 1))
        .collect()
}

pub fn save_manifest(path: &Path, corpus: &[AlignedUtterance]) -> Result<(), CorpusError> {
    save_manifest_records(
        path,
        &corpus
            .iter()
            .map(ManifestRecord::from_utterance)
            .collect::<Vec<_>>(),
    )
}

pub fn save_manifest_records(path: &Path, records: &[ManifestRecord]) -> Result<(), CorpusError> {
    let mut body = String::new();
    for rec in records {
        body.push_str(&serde_json::to_string(rec).expect("record serializes"));
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subword::units::deduplicate;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            vocabulary_size: 12,
            unit_alphabet: 30,
            units_per_phone: 2,
            lexicon_seed: 7,
            sentence_seed: 8,
            n_sentences: 40,
            sentence_length_range: (3, 9),
        }
    }

    #[test]
    fn manifest_round_trip() {
        let (_, corpus) = synthesize_corpus(&small_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        save_manifest(&path, &corpus).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(corpus, loaded);
    }

    #[test]
    fn manifest_two_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"id":"a","words":"x y","boundaries":"2,4","frame_rate_hz":50.0,"units":"1 1 2 2"}"#,
                "\n",
                r#"{"id":"b","words":"z","boundaries":"3","frame_rate_hz":50.0,"units":"5 5 5"}"#,
                "\n"
            ),
        )
        .unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].words, vec!["x", "y"]);
    }

    #[test]
    fn manifest_rejects_nonincreasing_boundaries() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(
            &path,
            r#"{"id":"bad1","words":"x y","boundaries":"5,3","frame_rate_hz":50.0,"units":"1 1 2 2 3"}"#,
        )
        .unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("boundaries not increasing"), "{err}");
    }

    #[test]
    fn manifest_rejects_boundary_unit_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(
            &path,
            r#"{"id":"bad2","words":"x","boundaries":"4","frame_rate_hz":50.0,"units":"1 2 3"}"#,
        )
        .unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(
            err.to_string().contains("bad2"),
            "error should name the utterance: {err}"
        );
    }

    #[test]
    fn manifest_parse_error_carries_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"id":"a","words":"x","boundaries":"2","frame_rate_hz":50.0,"units":"1 1"}"#,
                "\n",
                "not json\n"
            ),
        )
        .unwrap();
        match load_manifest(&path) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn synthesis_is_deterministic() {
        let spec = small_spec();
        let (lex_a, a) = synthesize_corpus(&spec).unwrap();
        let (lex_b, b) = synthesize_corpus(&spec).unwrap();
        assert_eq!(lex_a, lex_b);
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_lexicon_repeats_single_entry() {
        let spec = SynthSpec {
            vocabulary_size: 1,
            sentence_length_range: (3, 3),
            n_sentences: 5,
            ..small_spec()
        };
        let (lexicon, corpus) = synthesize_corpus(&spec).unwrap();
        for utt in &corpus {
            assert_eq!(utt.words.len(), 3);
            assert_eq!(utt.boundaries.len(), 3);
            for i in 0..3 {
                let (s, e) = utt.word_span(i);
                assert_eq!(
                    deduplicate(&utt.stream.units[s..e]).unwrap(),
                    lexicon.entries[0]
                );
            }
        }
    }

    /// Brute-force oracle: re-derive the word-to-unit mapping from the corpus
    /// alone and check it is a function that matches the lexicon.
    #[test]
    fn corpus_realigns_to_lexicon_exactly() {
        let (lexicon, corpus) = synthesize_corpus(&small_spec()).unwrap();
        let mut derived: HashMap<String, Vec<u32>> = HashMap::new();
        for utt in &corpus {
            for (i, w) in utt.words.iter().enumerate() {
                let (s, e) = utt.word_span(i);
                let entry = deduplicate(&utt.stream.units[s..e]).unwrap();
                let prev = derived.insert(w.clone(), entry.clone());
                if let Some(prev) = prev {
                    assert_eq!(prev, entry, "word {w} maps to two different entries");
                }
            }
        }
        for (word, entry) in &derived {
            let idx = lexicon.word_index(word).unwrap();
            assert_eq!(&lexicon.entries[idx], entry);
        }
    }

    #[test]
    fn transcribe_inverts_synthesis() {
        let (lexicon, corpus) = synthesize_corpus(&small_spec()).unwrap();
        for utt in corpus.iter().take(10) {
            let dedup = deduplicate(&utt.stream.units).unwrap();
            let words = lexicon.transcribe(&dedup).unwrap();
            assert_eq!(words, utt.words);
        }
    }

    #[test]
    fn transcribe_rejects_garbage() {
        let (lexicon, _) = synthesize_corpus(&small_spec()).unwrap();
        let k = lexicon.unit_alphabet as u32;
        assert!(lexicon.transcribe(&[k - 1, k - 2]).is_err());
    }

    #[test]
    fn split_all_train() {
        let (_, corpus) = synthesize_corpus(&small_spec()).unwrap();
        let (train, dev, test) = split_corpus(&corpus, (1.0, 0.0, 0.0), 3).unwrap();
        assert_eq!(train.len(), corpus.len());
        assert!(dev.is_empty() && test.is_empty());
    }

    #[test]
    fn split_exact_sizes() {
        let spec = SynthSpec {
            n_sentences: 100,
            ..small_spec()
        };
        let (_, corpus) = synthesize_corpus(&spec).unwrap();
        let (train, dev, test) = split_corpus(&corpus, (0.8, 0.1, 0.1), 3).unwrap();
        assert_eq!((train.len(), dev.len(), test.len()), (80, 10, 10));
    }

    #[test]
    fn split_deterministic_disjoint_exhaustive() {
        let (_, corpus) = synthesize_corpus(&small_spec()).unwrap();
        let a = split_corpus(&corpus, (0.5, 0.25, 0.25), 9).unwrap();
        let b = split_corpus(&corpus, (0.5, 0.25, 0.25), 9).unwrap();
        assert_eq!(a, b);
        let mut ids: Vec<&str> = a.0.iter().chain(&a.1).chain(&a.2).map(|u| u.id()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), corpus.len());
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let (_, corpus) = synthesize_corpus(&small_spec()).unwrap();
        assert!(split_corpus(&corpus, (0.5, 0.2, 0.2), 1).is_err());
    }
}
