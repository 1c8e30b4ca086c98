//! Perplexity of sampled continuations under an external scorer, plus the
//! bi-gram repetition rate used to expose prompt echoing.

use super::ngram::ExternalScorer;
use super::EvalError;
use crate::builder::SeqBuilder;
use crate::corpus::Lexicon;
use crate::model::{ModelConfig, ModelParams, Scalar};
use crate::sample::{sample_continuation, SampleParams};
use crate::subword::deduplicate;
use crate::vocab::{Modality, ModalityMask};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct PelmConfig {
    pub sample: SampleParams,
    /// Continuations are truncated to this many words after transcription.
    pub truncate_words: usize,
    pub seed: u64,
}

impl Default for PelmConfig {
    fn default() -> Self {
        Self {
            sample: SampleParams::default(),
            truncate_words: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PelmItem {
    pub utterance_id: String,
    /// Transcribed, truncated continuation words.
    pub cont_words: Vec<String>,
    pub log2p: f64,
    pub len: usize,
}

#[derive(Debug, Clone)]
pub struct PelmOutcome {
    pub pelm: f64,
    /// Items dropped because their continuation failed to transcribe.
    pub excluded: usize,
    pub items: Vec<PelmItem>,
}

/// Decode a sampled continuation of the given modality back to words.
/// Speech continuations invert the subword tokenization to raw units and run
/// the exact lexicon inverse; text continuations invert to characters.
pub fn continuation_decoder<'a>(
    builder: &'a SeqBuilder<'a>,
    modality: Modality,
    lexicon: &'a Lexicon,
) -> impl Fn(&[u32]) -> Result<Vec<String>, EvalError> + 'a {
    move |ids: &[u32]| {
        if ids.is_empty() {
            return Ok(Vec::new());
        }
        match modality {
            Modality::Speech => {
                let mut units = Vec::new();
                for &id in ids {
                    let (m, local) = builder
                        .vocab
                        .local_id(id)
                        .filter(|(m, _)| *m == Modality::Speech)
                        .ok_or_else(|| {
                            EvalError::Decode(format!("token {id} is not a unit subword"))
                        })?;
                    debug_assert_eq!(m, Modality::Speech);
                    units.extend_from_slice(builder.unit_model.expansion(local));
                }
                // Freely sampled subwords may abut with equal units; collapse
                // before the exact inverse, like a recognizer would.
                let dedup = deduplicate(&units).expect("non-empty units");
                lexicon
                    .transcribe(&dedup)
                    .map_err(|e| EvalError::Decode(e.to_string()))
            }
            Modality::Text => {
                let mut pieces = Vec::with_capacity(ids.len());
                for &id in ids {
                    let (_, local) = builder
                        .vocab
                        .local_id(id)
                        .filter(|(m, _)| *m == Modality::Text)
                        .ok_or_else(|| {
                            EvalError::Decode(format!("token {id} is not a text subword"))
                        })?;
                    pieces.push(crate::subword::Piece::Tok(local));
                }
                let text = builder
                    .text_model
                    .decode(&pieces)
                    .map_err(|e| EvalError::Decode(e.to_string()))?;
                Ok(text.split_whitespace().map(String::from).collect())
            }
        }
    }
}

/// Sample one continuation per prompt, transcribe, and aggregate
/// `2^(-sum log2 P(cont | gt prompt) / sum len)` under the external scorer.
pub fn pelm<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    prompts: &[Vec<u32>],
    utterance_ids: &[String],
    gt_prompt_words: &[Vec<String>],
    mask: &ModalityMask,
    decode_cont: &dyn Fn(&[u32]) -> Result<Vec<String>, EvalError>,
    scorer: &dyn ExternalScorer,
    pc: &PelmConfig,
) -> Result<PelmOutcome, EvalError> {
    if prompts.len() != gt_prompt_words.len() {
        return Err(EvalError::LengthMismatch(
            prompts.len(),
            gt_prompt_words.len(),
        ));
    }
    let mut items = Vec::new();
    let mut excluded = 0usize;
    let mut log2_sum = 0.0;
    let mut len_sum = 0usize;
    for (i, prompt) in prompts.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(pc.seed ^ (i as u64).wrapping_mul(0x9E37_79B9));
        let sampled = sample_continuation(params, cfg, prompt, Some(mask), &pc.sample, &mut rng)?;
        let mut words = match decode_cont(&sampled) {
            Ok(w) => w,
            Err(_) => {
                excluded += 1;
                continue;
            }
        };
        words.truncate(pc.truncate_words);
        let (log2p, len) = scorer.score_log2(&gt_prompt_words[i], &words);
        log2_sum += log2p;
        len_sum += len;
        items.push(PelmItem {
            utterance_id: utterance_ids[i].clone(),
            cont_words: words,
            log2p,
            len,
        });
    }
    if len_sum == 0 {
        return Err(EvalError::NothingScored);
    }
    Ok(PelmOutcome {
        pelm: 2f64.powf(-log2_sum / len_sum as f64),
        excluded,
        items,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepetitionRate {
    pub rate: f64,
    /// Continuations under two words carry no bi-grams; rate is 0 and flagged.
    pub too_short: bool,
}

/// Proportion of continuation bi-gram occurrences that appear among the
/// prompt's bi-grams.
pub fn repetition_rate(prompt_words: &[String], cont_words: &[String]) -> RepetitionRate {
    if cont_words.len() < 2 {
        return RepetitionRate {
            rate: 0.0,
            too_short: true,
        };
    }
    let prompt_bigrams: std::collections::HashSet<(&str, &str)> = prompt_words
        .windows(2)
        .map(|w| (w[0].as_str(), w[1].as_str()))
        .collect();
    let total = cont_words.len() - 1;
    let mut hits = 0usize;
    for w in cont_words.windows(2) {
        if prompt_bigrams.contains(&(w[0].as_str(), w[1].as_str())) {
            hits += 1;
        }
    }
    RepetitionRate {
        rate: hits as f64 / total as f64,
        too_short: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::ngram::UniformScorer;
    use crate::model::ModelParams;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn repetition_of_identical_text_is_one() {
        let p = words("how are you doing today");
        let r = repetition_rate(&p, &p);
        assert_eq!(r.rate, 1.0);
        assert!(!r.too_short);
    }

    #[test]
    fn repetition_of_disjoint_text_is_zero() {
        let r = repetition_rate(&words("a b c d"), &words("x y z w"));
        assert_eq!(r.rate, 0.0);
    }

    #[test]
    fn repetition_counts_continuation_occurrences() {
        // "a b" appears twice in the continuation and once in the prompt;
        // both continuation occurrences count.
        let r = repetition_rate(&words("a b c"), &words("a b a b"));
        assert!((r.rate - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn short_continuation_is_flagged() {
        let r = repetition_rate(&words("a b"), &words("a"));
        assert_eq!(r.rate, 0.0);
        assert!(r.too_short);
    }

    /// With a uniform scorer over V words, PELM equals V exactly regardless
    /// of what the model samples.
    #[test]
    fn uniform_scorer_gives_vocab_size_exactly() {
        let cfg = ModelConfig {
            n_layers: 1,
            n_heads: 2,
            embed_dim: 16,
            ffn_dim: 24,
            dropout_prob: 0.0,
            max_seq_len: 32,
            vocab_size: 12,
            ..ModelConfig::default()
        };
        let params = ModelParams::<f64>::init(&cfg, 8);
        let mut allow = vec![false; cfg.vocab_size];
        for id in 4..10 {
            allow[id] = true;
        }
        let mask = ModalityMask::new(Modality::Text, 4, allow);
        let prompts: Vec<Vec<u32>> = (0..5).map(|i| vec![1, 2 + i as u32]).collect();
        let ids: Vec<String> = (0..5).map(|i| format!("u{i}")).collect();
        let gt: Vec<Vec<String>> = (0..5).map(|_| words("some prompt words")).collect();
        // Decode every token to a fixed word.
        let decode = |ids: &[u32]| Ok(ids.iter().map(|t| format!("w{t}")).collect());
        let scorer = UniformScorer { vocab_words: 64 };
        let out = pelm(
            &params,
            &cfg,
            &prompts,
            &ids,
            &gt,
            &mask,
            &decode,
            &scorer,
            &PelmConfig::default(),
        )
        .unwrap();
        assert_eq!(out.pelm, 64.0);
        assert_eq!(out.excluded, 0);
    }

    #[test]
    fn failed_transcriptions_are_excluded_and_reported() {
        let cfg = ModelConfig {
            n_layers: 1,
            n_heads: 2,
            embed_dim: 16,
            ffn_dim: 24,
            dropout_prob: 0.0,
            max_seq_len: 32,
            vocab_size: 12,
            ..ModelConfig::default()
        };
        let params = ModelParams::<f64>::init(&cfg, 8);
        let mut allow = vec![false; cfg.vocab_size];
        for id in 4..10 {
            allow[id] = true;
        }
        let mask = ModalityMask::new(Modality::Text, 4, allow);
        let prompts: Vec<Vec<u32>> = (0..4).map(|i| vec![1, 2 + i as u32]).collect();
        let ids: Vec<String> = (0..4).map(|i| format!("u{i}")).collect();
        let gt: Vec<Vec<String>> = (0..4).map(|_| words("gt words")).collect();
        let call = std::cell::Cell::new(0usize);
        let decode = move |tok: &[u32]| {
            let i = call.get();
            call.set(i + 1);
            if i % 2 == 0 {
                Err(EvalError::Decode("bad".into()))
            } else {
                Ok(tok.iter().map(|t| format!("w{t}")).collect())
            }
        };
        let scorer = UniformScorer { vocab_words: 16 };
        let out = pelm(
            &params,
            &cfg,
            &prompts,
            &ids,
            &gt,
            &mask,
            &decode,
            &scorer,
            &PelmConfig::default(),
        )
        .unwrap();
        assert_eq!(out.excluded, 2);
        assert_eq!(out.items.len(), 2);
        assert_eq!(out.pelm, 16.0);
    }
}
