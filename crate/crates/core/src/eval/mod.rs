//! Automatic metrics: context retrieval accuracy over a score matrix,
//! perplexity under an external scorer, and the bi-gram repetition rate.

pub mod cra;
pub mod ngram;
pub mod pelm;

pub use cra::{cra_from_matrix, pmi_consistent, score_matrix, CraOutcome, ScoreMatrix};
pub use ngram::{ExternalScorer, KneserNeyTrigram, UniformScorer};
pub use pelm::{
    continuation_decoder, pelm, repetition_rate, PelmConfig, PelmItem, PelmOutcome,
    RepetitionRate,
};

use crate::builder::{BuildError, SeqBuilder};
use crate::corpus::AlignedUtterance;
use crate::model::ModelError;
use crate::sample::SampleError;
use crate::vocab::{Modality, Special};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need {need} qualifying utterances, pool has {have}")]
    PoolTooSmall { need: usize, have: usize },
    #[error("prompt and continuation counts differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no scoreable continuations")]
    NothingScored,
    #[error("cannot decode continuation: {0}")]
    Decode(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Sample(#[from] SampleError),
}

/// One prompt/continuation pair with both its word and unit renderings,
/// split at an exact word boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub utterance_id: String,
    pub prompt_words: Vec<String>,
    pub cont_words: Vec<String>,
    pub prompt_units: Vec<u32>,
    pub cont_units: Vec<u32>,
}

/// Deterministically select the `n` shortest utterances with at least
/// `min_words` words and split each at word `prompt_words`, mapping the split
/// to the word's exact end frame.
pub fn select_eval_set(
    corpus: &[AlignedUtterance],
    n: usize,
    min_words: usize,
    prompt_words: usize,
) -> Result<Vec<EvalItem>, EvalError> {
    assert!(prompt_words < min_words, "prompt must leave a continuation");
    let mut pool: Vec<&AlignedUtterance> =
        corpus.iter().filter(|u| u.words.len() >= min_words).collect();
    if pool.len() < n {
        return Err(EvalError::PoolTooSmall {
            need: n,
            have: pool.len(),
        });
    }
    pool.sort_by(|a, b| {
        a.words
            .len()
            .cmp(&b.words.len())
            .then(a.stream.units.len().cmp(&b.stream.units.len()))
            .then(a.id().cmp(b.id()))
    });
    Ok(pool[..n]
        .iter()
        .map(|u| {
            let split_frame = u.boundaries[prompt_words - 1];
            EvalItem {
                utterance_id: u.id().to_string(),
                prompt_words: u.words[..prompt_words].to_vec(),
                cont_words: u.words[prompt_words..].to_vec(),
                prompt_units: u.stream.units[..split_frame].to_vec(),
                cont_units: u.stream.units[split_frame..].to_vec(),
            }
        })
        .collect())
}

/// Prompt token IDs: opener plus content in the prompt modality. When the
/// continuation modality differs, the prompt ends with the corresponding
/// switch token, since the sequence grammar marks every modality change.
pub fn prompt_ids(
    builder: &SeqBuilder,
    item: &EvalItem,
    prompt_modality: Modality,
    cont_modality: Modality,
) -> Result<Vec<u32>, EvalError> {
    let mut ids = vec![Special::opener(prompt_modality).id()];
    match prompt_modality {
        Modality::Speech => ids.extend(builder.encode_unit_span(&item.prompt_units)?),
        Modality::Text => ids.extend(builder.encode_words(&item.prompt_words)),
    }
    if prompt_modality != cont_modality {
        ids.push(Special::switch(prompt_modality).id());
    }
    Ok(ids)
}

/// Continuation token IDs in the given modality: content only.
pub fn cont_ids(
    builder: &SeqBuilder,
    item: &EvalItem,
    modality: Modality,
) -> Result<Vec<u32>, EvalError> {
    Ok(match modality {
        Modality::Speech => builder.encode_unit_span(&item.cont_units)?,
        Modality::Text => builder.encode_words(&item.cont_words),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize_corpus, SynthSpec};
    use crate::subword::deduplicate;

    fn eval_corpus() -> (crate::corpus::Lexicon, Vec<AlignedUtterance>) {
        synthesize_corpus(&SynthSpec {
            vocabulary_size: 30,
            n_sentences: 60,
            sentence_length_range: (15, 30),
            ..SynthSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn selects_shortest_qualifying_in_order() {
        let (_, corpus) = eval_corpus();
        let items = select_eval_set(&corpus, 10, 20, 10).unwrap();
        assert_eq!(items.len(), 10);
        let lens: Vec<usize> = items
            .iter()
            .map(|i| i.prompt_words.len() + i.cont_words.len())
            .collect();
        assert!(lens.windows(2).all(|w| w[0] <= w[1]));
        assert!(lens.iter().all(|&l| l >= 20));
        // Exactly the qualifying pool when n equals its size.
        let qualifying = corpus.iter().filter(|u| u.words.len() >= 20).count();
        let all = select_eval_set(&corpus, qualifying, 20, 10).unwrap();
        assert_eq!(all.len(), qualifying);
    }

    #[test]
    fn rejects_oversized_request() {
        let (_, corpus) = eval_corpus();
        let qualifying = corpus.iter().filter(|u| u.words.len() >= 20).count();
        assert!(matches!(
            select_eval_set(&corpus, qualifying + 1, 20, 10),
            Err(EvalError::PoolTooSmall { .. })
        ));
    }

    /// The split lands on word 10's end frame exactly: the prompt units
    /// transcribe back to the first ten words.
    #[test]
    fn split_aligns_with_word_boundary() {
        let (lexicon, corpus) = eval_corpus();
        let items = select_eval_set(&corpus, 10, 20, 10).unwrap();
        for item in &items {
            let prompt_dedup = deduplicate(&item.prompt_units).unwrap();
            assert_eq!(
                lexicon.transcribe(&prompt_dedup).unwrap(),
                item.prompt_words
            );
            let cont_dedup = deduplicate(&item.cont_units).unwrap();
            assert_eq!(lexicon.transcribe(&cont_dedup).unwrap(), item.cont_words);
        }
    }
}
