//! Pair-frequency merge learning shared by the unit and text tokenizers.
//!
//! Training greedily merges the most frequent adjacent token pair until the
//! vocabulary target is reached or no pair occurs at least twice. Ties break
//! toward the smallest (left, right) token-ID pair, so retraining on the same
//! corpus reproduces the merge list exactly.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use thiserror::Error;

pub type TokenId = u32;

/// Pairs merged below this frequency cannot compress, so training stops.
const MIN_MERGE_FREQ: u64 = 2;

#[derive(Debug, Error)]
pub enum SubwordError {
    #[error("empty input")]
    EmptyInput,
    #[error("vocab_size {vocab_size} must exceed base alphabet size {alphabet}")]
    VocabTooSmall { vocab_size: usize, alphabet: usize },
    #[error("cannot decode unknown token")]
    DecodeUnknown,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model file parse error at line {line}: {msg}")]
    ParseModel { line: usize, msg: String },
}

/// Base symbol of a tokenizer alphabet.
pub trait Symbol: Clone + Eq + Ord + std::hash::Hash + std::fmt::Debug {
    /// Separator between base surfaces inside a merged token's surface.
    const JOINER: &'static str;
    fn surface(&self) -> String;
    fn parse_surface(s: &str) -> Option<Self>;
}

impl Symbol for u32 {
    const JOINER: &'static str = "_";
    fn surface(&self) -> String {
        self.to_string()
    }
    fn parse_surface(s: &str) -> Option<Self> {
        s.parse().ok()
    }
}

impl Symbol for char {
    const JOINER: &'static str = "";
    fn surface(&self) -> String {
        self.to_string()
    }
    fn parse_surface(s: &str) -> Option<Self> {
        let mut it = s.chars();
        match (it.next(), it.next()) {
            (Some(c), None) => Some(c),
            _ => None,
        }
    }
}

/// Token emitted by [`MergeModel::encode`]. Symbols outside the base alphabet
/// become [`Piece::Unknown`] instead of erroring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Piece {
    Tok(TokenId),
    Unknown,
}

/// Learned merge model: a base alphabet plus an ordered merge list.
///
/// Token IDs `0..base_len` are the sorted base alphabet; rule `i` creates
/// token `base_len + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeModel<S: Symbol> {
    base: Vec<S>,
    base_index: HashMap<S, TokenId>,
    merges: Vec<(TokenId, TokenId)>,
    surfaces: Vec<String>,
    expansions: Vec<Vec<S>>,
}

impl<S: Symbol> MergeModel<S> {
    fn from_parts(base: Vec<S>, merges: Vec<(TokenId, TokenId)>) -> Self {
        let base_index = base
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as TokenId))
            .collect();
        let mut surfaces: Vec<String> = base.iter().map(|s| s.surface()).collect();
        let mut expansions: Vec<Vec<S>> = base.iter().map(|s| vec![s.clone()]).collect();
        for &(l, r) in &merges {
            let surface = format!("{}{}{}", surfaces[l as usize], S::JOINER, surfaces[r as usize]);
            surfaces.push(surface);
            let mut exp = expansions[l as usize].clone();
            exp.extend(expansions[r as usize].iter().cloned());
            expansions.push(exp);
        }
        Self {
            base,
            base_index,
            merges,
            surfaces,
            expansions,
        }
    }

    /// Greedy highest-frequency pair merging up to `vocab_size` tokens.
    pub fn train(corpus: &[Vec<S>], vocab_size: usize) -> Result<Self, SubwordError> {
        if corpus.iter().all(|s| s.is_empty()) {
            return Err(SubwordError::EmptyInput);
        }
        let alphabet: BTreeSet<S> = corpus.iter().flatten().cloned().collect();
        let base: Vec<S> = alphabet.into_iter().collect();
        if vocab_size <= base.len() {
            return Err(SubwordError::VocabTooSmall {
                vocab_size,
                alphabet: base.len(),
            });
        }
        let index: HashMap<&S, TokenId> = base
            .iter()
            .enumerate()
            .map(|(i, s)| (s, i as TokenId))
            .collect();
        let mut work: Vec<Vec<TokenId>> = corpus
            .iter()
            .map(|seq| seq.iter().map(|s| index[s]).collect())
            .collect();

        let mut merges: Vec<(TokenId, TokenId)> = Vec::new();
        let mut next_id = base.len() as TokenId;
        while (next_id as usize) < vocab_size {
            let mut counts: HashMap<(TokenId, TokenId), u64> = HashMap::new();
            for seq in &work {
                for w in seq.windows(2) {
                    *counts.entry((w[0], w[1])).or_insert(0) += 1;
                }
            }
            let best = counts
                .iter()
                .filter(|(_, &c)| c >= MIN_MERGE_FREQ)
                .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)));
            let Some((&pair, _)) = best else { break };
            for seq in &mut work {
                apply_merge(seq, pair, next_id);
            }
            merges.push(pair);
            next_id += 1;
        }
        Ok(Self::from_parts(base, merges))
    }

    /// Apply merges in training order. Unknown symbols block merges.
    pub fn encode(&self, seq: &[S]) -> Vec<Piece> {
        const UNK: TokenId = TokenId::MAX;
        let mut work: Vec<TokenId> = seq
            .iter()
            .map(|s| self.base_index.get(s).copied().unwrap_or(UNK))
            .collect();
        let base_len = self.base.len() as TokenId;
        for (i, &pair) in self.merges.iter().enumerate() {
            apply_merge(&mut work, pair, base_len + i as TokenId);
        }
        work.into_iter()
            .map(|t| if t == UNK { Piece::Unknown } else { Piece::Tok(t) })
            .collect()
    }

    pub fn decode(&self, pieces: &[Piece]) -> Result<Vec<S>, SubwordError> {
        let mut out = Vec::new();
        for p in pieces {
            match p {
                Piece::Tok(t) => out.extend(self.expansions[*t as usize].iter().cloned()),
                Piece::Unknown => return Err(SubwordError::DecodeUnknown),
            }
        }
        Ok(out)
    }

    pub fn vocab_len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn base_len(&self) -> usize {
        self.base.len()
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    pub fn surface(&self, t: TokenId) -> &str {
        &self.surfaces[t as usize]
    }

    pub fn expansion(&self, t: TokenId) -> &[S] {
        &self.expansions[t as usize]
    }

    pub fn save(&self, path: &Path, modality: &str) -> Result<(), SubwordError> {
        let mut body = format!("unitext-subword v1 modality={modality}\n");
        for s in &self.base {
            body.push_str(&format!("base {}\n", s.surface()));
        }
        for &(l, r) in &self.merges {
            body.push_str(&format!(
                "merge {} {}\n",
                self.surfaces[l as usize], self.surfaces[r as usize]
            ));
        }
        std::fs::write(path, body).map_err(|source| SubwordError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Load a model file, checking the header's modality tag.
    pub fn load(path: &Path, modality: &str) -> Result<Self, SubwordError> {
        let body = std::fs::read_to_string(path).map_err(|source| SubwordError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let parse_err = |line: usize, msg: String| SubwordError::ParseModel { line, msg };
        let mut lines = body.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty file".into()))?;
        let expect = format!("unitext-subword v1 modality={modality}");
        if header != expect {
            return Err(parse_err(1, format!("bad header {header:?}, want {expect:?}")));
        }
        let mut base: Vec<S> = Vec::new();
        let mut merge_rules: Vec<(String, String)> = Vec::new();
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("base ") {
                if !merge_rules.is_empty() {
                    return Err(parse_err(i + 1, "base after merge".into()));
                }
                let sym = S::parse_surface(rest)
                    .ok_or_else(|| parse_err(i + 1, format!("bad base symbol {rest:?}")))?;
                base.push(sym);
            } else if let Some(rest) = line.strip_prefix("merge ") {
                let mut parts = rest.split(' ');
                match (parts.next(), parts.next(), parts.next()) {
                    (Some(l), Some(r), None) => merge_rules.push((l.to_string(), r.to_string())),
                    _ => return Err(parse_err(i + 1, format!("bad merge rule {rest:?}"))),
                }
            } else {
                return Err(parse_err(i + 1, format!("unrecognized line {line:?}")));
            }
        }
        if base.windows(2).any(|w| w[0] >= w[1]) {
            return Err(parse_err(0, "base alphabet not sorted".into()));
        }
        // Resolve merge-rule surfaces against the vocabulary built so far.
        let mut surfaces: HashMap<String, TokenId> = base
            .iter()
            .enumerate()
            .map(|(i, s)| (s.surface(), i as TokenId))
            .collect();
        let mut surface_list: Vec<String> = base.iter().map(|s| s.surface()).collect();
        let mut merges = Vec::with_capacity(merge_rules.len());
        for (n, (l, r)) in merge_rules.into_iter().enumerate() {
            let line = base.len() + n + 2;
            let &li = surfaces
                .get(&l)
                .ok_or_else(|| parse_err(line, format!("unknown merge part {l:?}")))?;
            let &ri = surfaces
                .get(&r)
                .ok_or_else(|| parse_err(line, format!("unknown merge part {r:?}")))?;
            let new_surface = format!("{l}{}{r}", S::JOINER);
            let id = surface_list.len() as TokenId;
            surfaces.insert(new_surface.clone(), id);
            surface_list.push(new_surface);
            merges.push((li, ri));
        }
        Ok(Self::from_parts(base, merges))
    }
}

/// One left-to-right pass replacing adjacent `pair` with `new_id`.
fn apply_merge(seq: &mut Vec<TokenId>, pair: (TokenId, TokenId), new_id: TokenId) {
    let mut out = Vec::with_capacity(seq.len());
    let mut i = 0;
    while i < seq.len() {
        if i + 1 < seq.len() && seq[i] == pair.0 && seq[i + 1] == pair.1 {
            out.push(new_id);
            i += 2;
        } else {
            out.push(seq[i]);
            i += 1;
        }
    }
    *seq = out;
}
