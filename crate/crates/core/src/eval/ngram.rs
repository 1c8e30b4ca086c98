//! External text scorers: a word-level trigram model with interpolated
//! Kneser-Ney smoothing, and a uniform scorer for analytic tests.

use std::collections::HashMap;

/// Scores a continuation given a context, in log base 2, along with the
/// continuation's token length. Deterministic for fixed inputs.
pub trait ExternalScorer: Send + Sync {
    fn score_log2(&self, context: &[String], continuation: &[String]) -> (f64, usize);
}

/// Uniform distribution over a fixed word vocabulary.
pub struct UniformScorer {
    pub vocab_words: usize,
}

impl ExternalScorer for UniformScorer {
    fn score_log2(&self, _context: &[String], continuation: &[String]) -> (f64, usize) {
        let per_word = -(self.vocab_words as f64).log2();
        (per_word * continuation.len() as f64, continuation.len())
    }
}

const SENTENCE_START: u32 = 0;

/// Interpolated Kneser-Ney trigram model.
///
/// Discounts use the Ney estimate `D = n1 / (n1 + 2 n2)` per order. The
/// unigram level folds one extra type in for unknown words, so every score is
/// finite and each conditional distribution sums to one.
pub struct KneserNeyTrigram {
    vocab: HashMap<String, u32>,
    word_types: usize,
    tri: HashMap<(u32, u32, u32), u64>,
    ctx2: HashMap<(u32, u32), u64>,
    n1p_after2: HashMap<(u32, u32), u64>,
    n1p_before2: HashMap<(u32, u32), u64>,
    n1p_mid: HashMap<u32, u64>,
    n1p_after1: HashMap<u32, u64>,
    n1p_before1: HashMap<u32, u64>,
    bigram_types: u64,
    d3: f64,
    d2: f64,
}

fn ney_discount(counts: impl Iterator<Item = u64>) -> f64 {
    let mut n1 = 0u64;
    let mut n2 = 0u64;
    for c in counts {
        if c == 1 {
            n1 += 1;
        } else if c == 2 {
            n2 += 1;
        }
    }
    if n1 + 2 * n2 == 0 {
        0.5
    } else {
        n1 as f64 / (n1 + 2 * n2) as f64
    }
}

impl KneserNeyTrigram {
    pub fn train(sentences: &[Vec<String>]) -> Self {
        let mut vocab: HashMap<String, u32> = HashMap::new();
        vocab.insert("<s>".to_string(), SENTENCE_START);
        let intern = |vocab: &mut HashMap<String, u32>, w: &str| -> u32 {
            if let Some(&id) = vocab.get(w) {
                id
            } else {
                let id = vocab.len() as u32;
                vocab.insert(w.to_string(), id);
                id
            }
        };

        let mut tri: HashMap<(u32, u32, u32), u64> = HashMap::new();
        let mut ctx2: HashMap<(u32, u32), u64> = HashMap::new();
        for sentence in sentences {
            let mut padded = vec![SENTENCE_START, SENTENCE_START];
            for w in sentence {
                padded.push(intern(&mut vocab, w));
            }
            for win in padded.windows(3) {
                *tri.entry((win[0], win[1], win[2])).or_insert(0) += 1;
                *ctx2.entry((win[0], win[1])).or_insert(0) += 1;
            }
        }

        let mut n1p_after2: HashMap<(u32, u32), u64> = HashMap::new();
        let mut n1p_before2: HashMap<(u32, u32), u64> = HashMap::new();
        for &(u, v, w) in tri.keys() {
            *n1p_after2.entry((u, v)).or_insert(0) += 1;
            *n1p_before2.entry((v, w)).or_insert(0) += 1;
        }
        let mut n1p_mid: HashMap<u32, u64> = HashMap::new();
        let mut n1p_after1: HashMap<u32, u64> = HashMap::new();
        let mut n1p_before1: HashMap<u32, u64> = HashMap::new();
        for (&(v, w), &uc) in &n1p_before2 {
            *n1p_mid.entry(v).or_insert(0) += uc;
            *n1p_after1.entry(v).or_insert(0) += 1;
            *n1p_before1.entry(w).or_insert(0) += 1;
        }
        let bigram_types = n1p_before2.len() as u64;
        let d3 = ney_discount(tri.values().copied());
        let d2 = ney_discount(n1p_before2.values().copied());
        // Emission vocabulary excludes the start symbol.
        let word_types = vocab.len() - 1;

        Self {
            vocab,
            word_types,
            tri,
            ctx2,
            n1p_after2,
            n1p_before2,
            n1p_mid,
            n1p_after1,
            n1p_before1,
            bigram_types,
            d3,
            d2,
        }
    }

    pub fn word_types(&self) -> usize {
        self.word_types
    }

    fn p_unigram(&self, w: Option<u32>) -> f64 {
        let cont = w
            .and_then(|w| self.n1p_before1.get(&w))
            .copied()
            .unwrap_or(0);
        (cont as f64 + 1.0) / (self.bigram_types as f64 + self.word_types as f64 + 1.0)
    }

    fn p_bigram(&self, v: u32, w: Option<u32>) -> f64 {
        let mid = self.n1p_mid.get(&v).copied().unwrap_or(0);
        if mid == 0 {
            return self.p_unigram(w);
        }
        let mid = mid as f64;
        let num = w
            .and_then(|w| self.n1p_before2.get(&(v, w)))
            .copied()
            .unwrap_or(0) as f64;
        let lambda = self.d2 * self.n1p_after1.get(&v).copied().unwrap_or(0) as f64 / mid;
        (num - self.d2).max(0.0) / mid + lambda * self.p_unigram(w)
    }

    fn p_trigram(&self, u: u32, v: u32, w: Option<u32>) -> f64 {
        let ctx = self.ctx2.get(&(u, v)).copied().unwrap_or(0);
        if ctx == 0 {
            return self.p_bigram(v, w);
        }
        let ctx = ctx as f64;
        let num = match w {
            Some(w) => self.tri.get(&(u, v, w)).copied().unwrap_or(0) as f64,
            None => 0.0,
        };
        let lambda = self.d3 * self.n1p_after2.get(&(u, v)).copied().unwrap_or(0) as f64 / ctx;
        (num - self.d3).max(0.0) / ctx + lambda * self.p_bigram(v, w)
    }

    /// Conditional probability of `word` given the two preceding words.
    /// Unknown history backs off; unknown `word` gets the reserved unk mass.
    pub fn prob(&self, u: &str, v: &str, word: &str) -> f64 {
        let uid = self.vocab.get(u).copied().unwrap_or(u32::MAX);
        let vid = self.vocab.get(v).copied().unwrap_or(u32::MAX);
        let wid = self.vocab.get(word).copied();
        self.p_trigram(uid, vid, wid)
    }
}

impl ExternalScorer for KneserNeyTrigram {
    fn score_log2(&self, context: &[String], continuation: &[String]) -> (f64, usize) {
        let mut hist: Vec<&str> = vec!["<s>", "<s>"];
        hist.extend(context.iter().map(|s| s.as_str()));
        let mut total = 0.0;
        for w in continuation {
            let u = hist[hist.len() - 2];
            let v = hist[hist.len() - 1];
            total += self.prob(u, v, w).log2();
            hist.push(w);
        }
        (total, continuation.len())
    }
}
