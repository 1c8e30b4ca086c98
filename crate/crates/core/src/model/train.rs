//! Training loop: three-way source mixing by token budget, parallel
//! per-sequence gradients with a fixed reduction order, Adam, and a step log.

use super::backward::accumulate_sequence_grads;
use super::forward::TrainSequence;
use super::params::ModelParams;
use super::{clip_global_norm, lr_at, AdamState, ModelConfig, ModelError, Scalar, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;

/// Training data split by source kind: speech-only, mixed speech-text, and
/// text-only. Empty kinds are excluded from the mix with renormalization.
#[derive(Debug, Clone, Default)]
pub struct StreamSet {
    pub speech: Vec<TrainSequence>,
    pub mixed: Vec<TrainSequence>,
    pub text: Vec<TrainSequence>,
}

impl StreamSet {
    /// All data in one source, for fine-tuning.
    pub fn single(data: Vec<TrainSequence>) -> Self {
        Self {
            speech: data,
            mixed: Vec::new(),
            text: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    /// Tokens drawn from (speech-only, mixed, text-only) this batch.
    pub source_tokens: [usize; 3],
}

pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub log: Vec<StepRecord>,
}

fn mix_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Endless pass over one source with length-bucketed shuffling per epoch.
struct SourceStream<'a> {
    seqs: &'a [TrainSequence],
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    seed: u64,
}

impl<'a> SourceStream<'a> {
    fn new(seqs: &'a [TrainSequence], seed: u64) -> Self {
        Self {
            seqs,
            order: Vec::new(),
            pos: 0,
            epoch: 0,
            seed,
        }
    }

    fn reshuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, self.epoch, 0));
        let mut buckets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.seqs.iter().enumerate() {
            buckets.entry(s.ids.len() / 16).or_default().push(i);
        }
        let mut bucket_list: Vec<Vec<usize>> = buckets.into_values().collect();
        for b in &mut bucket_list {
            b.shuffle(&mut rng);
        }
        bucket_list.shuffle(&mut rng);
        self.order = bucket_list.concat();
        self.pos = 0;
        self.epoch += 1;
    }

    fn next(&mut self) -> &'a TrainSequence {
        if self.pos >= self.order.len() {
            self.reshuffle();
        }
        let s = &self.seqs[self.order[self.pos]];
        self.pos += 1;
        s
    }
}

/// Draws sequences source by source so the expected token share of each
/// present source matches the configured mix.
pub(crate) struct BatchMixer<'a> {
    streams: [Option<SourceStream<'a>>; 3],
    /// Per-draw source probabilities: mix weight divided by mean length.
    probs: [f64; 3],
    tokens_per_batch: usize,
    rng: ChaCha8Rng,
}

impl<'a> BatchMixer<'a> {
    pub(crate) fn new(
        set: &'a StreamSet,
        tc: &TrainConfig,
    ) -> Result<Self, ModelError> {
        let sources = [&set.speech, &set.mixed, &set.text];
        let mut probs = [0.0f64; 3];
        let mut streams: [Option<SourceStream<'a>>; 3] = [None, None, None];
        for (i, src) in sources.iter().enumerate() {
            if src.is_empty() || tc.source_mix[i] <= 0.0 {
                continue;
            }
            let mean_len =
                src.iter().map(|s| s.ids.len()).sum::<usize>() as f64 / src.len() as f64;
            probs[i] = tc.source_mix[i] / mean_len;
            streams[i] = Some(SourceStream::new(src, mix_seed(tc.seed, 7, i as u64)));
        }
        let total: f64 = probs.iter().sum();
        if total <= 0.0 {
            return Err(ModelError::NoData);
        }
        for p in &mut probs {
            *p /= total;
        }
        Ok(Self {
            streams,
            probs,
            tokens_per_batch: tc.tokens_per_batch,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(tc.seed, 11, 0)),
        })
    }

    fn pick_source(&mut self) -> usize {
        let u: f64 = self.rng.gen();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
        last
    }

    pub(crate) fn next_batch(&mut self) -> (Vec<&'a TrainSequence>, [usize; 3]) {
        let mut batch = Vec::new();
        let mut source_tokens = [0usize; 3];
        let mut tokens = 0usize;
        while tokens < self.tokens_per_batch {
            let si = self.pick_source();
            let seq = self.streams[si].as_mut().expect("picked present source").next();
            tokens += seq.ids.len();
            source_tokens[si] += seq.ids.len();
            batch.push(seq);
        }
        (batch, source_tokens)
    }
}

/// Train with Adam, decoupled weight decay, and global-norm clipping.
/// Deterministic given the seed: data order is drawn single-threaded and the
/// parallel per-sequence gradients reduce in batch order.
pub fn train<T: Scalar>(
    cfg: &ModelConfig,
    tc: &TrainConfig,
    params: ModelParams<T>,
    streams: &StreamSet,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<TrainOutcome<T>, ModelError> {
    cfg.validate()?;
    tc.validate()?;
    let mut mixer = BatchMixer::new(streams, tc)?;
    let mut params = params;
    let mut state = AdamState::new(cfg);
    let mut log = Vec::with_capacity(tc.max_updates as usize);

    for step in 0..tc.max_updates {
        let (batch, source_tokens) = mixer.next_batch();
        let items: Vec<(u64, &TrainSequence)> = batch
            .iter()
            .enumerate()
            .map(|(bi, seq)| (mix_seed(tc.seed, step, bi as u64), *seq))
            .collect();
        let results: Vec<Result<(f64, usize, ModelParams<T>), ModelError>> = items
            .par_iter()
            .map(|(seed, seq)| {
                let mut grads = ModelParams::zeros(cfg);
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let (s, c) =
                    accumulate_sequence_grads(&params, cfg, seq, Some(&mut rng), &mut grads)?;
                Ok((s, c, grads))
            })
            .collect();

        let mut grads = ModelParams::zeros(cfg);
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for r in results {
            let (s, c, g) = r?;
            loss_sum += s;
            count += c;
            grads.add_assign(&g);
        }
        if count == 0 {
            continue;
        }
        grads.scale(1.0 / count as f64);
        let loss = loss_sum / count as f64;
        if !loss.is_finite() {
            return Err(ModelError::Diverged { step });
        }
        let grad_norm = clip_global_norm(&mut grads, tc.grad_clip_norm);
        let lr_now = lr_at(tc, step);
        state.step(&mut params, &grads, tc, lr_now);
        let rec = StepRecord {
            step,
            loss,
            lr: lr_now,
            grad_norm,
            source_tokens,
        };
        on_step(&rec);
        log.push(rec);
    }
    Ok(TrainOutcome { params, log })
}
