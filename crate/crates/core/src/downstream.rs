//! Downstream fine-tuning: sequence classification through a self-attention
//! pooling head, and tagged sequence generation with beam decoding. Both
//! tasks are synthetic, with ground truth shared across modalities so
//! cross-modal transfer is measurable in isolation.

use crate::builder::{BuildError, SeqBuilder};
use crate::corpus::{AlignedUtterance, Lexicon, ManifestRecord};
use crate::model::{
    backward_from_hidden, forward_cache, next_token_logits, ModelConfig, ModelError, ModelParams,
    Scalar, TrainSequence,
};
use crate::vocab::{JointVocab, Modality, Special};
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

/// Entity-bracketing specials appended to the joint vocabulary at build time.
pub const NER_SPECIALS: [&str; 4] = ["<NE1>", "</NE1>", "<NE2>", "</NE2>"];

#[derive(Debug, Error)]
pub enum DownstreamError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("malformed target at position {0}: {1}")]
    MalformedTarget(usize, String),
    #[error("empty task dataset")]
    EmptyTask,
    #[error("vocabulary is missing the entity tag specials")]
    MissingTags,
}

// ---------------------------------------------------------------------------
// Synthetic task definitions
// ---------------------------------------------------------------------------

/// Every third lexicon word is a designated keyword; a keyword's class is the
/// ring arc that owns its index. A sentence's label is the class of the first
/// keyword it contains. Returns `None` for the rare keyword-free sentence.
pub fn sa_label(lexicon: &Lexicon, n_classes: usize, words: &[String]) -> Option<usize> {
    for w in words {
        let idx = lexicon.word_index(w)?;
        if idx % 3 == 0 {
            return Some(idx * n_classes / lexicon.words.len());
        }
    }
    None
}

/// Entity designation: word index 2 mod 7 is an entity of type 1, index
/// 5 mod 7 an entity of type 2.
pub fn entity_type(lexicon: &Lexicon, word: &str) -> Option<u8> {
    let idx = lexicon.word_index(word)?;
    match idx % 7 {
        2 => Some(1),
        5 => Some(2),
        _ => None,
    }
}

#[derive(Debug, Clone)]
pub struct SaExample {
    pub utt: AlignedUtterance,
    pub label: usize,
}

pub fn build_sa_task(
    lexicon: &Lexicon,
    corpus: &[AlignedUtterance],
    n_classes: usize,
) -> Vec<SaExample> {
    corpus
        .iter()
        .filter_map(|utt| {
            sa_label(lexicon, n_classes, &utt.words).map(|label| SaExample {
                utt: utt.clone(),
                label,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct NerExample {
    pub utt: AlignedUtterance,
    /// (word index, entity type) pairs.
    pub entities: Vec<(usize, u8)>,
}

pub fn build_ner_task(lexicon: &Lexicon, corpus: &[AlignedUtterance]) -> Vec<NerExample> {
    corpus
        .iter()
        .map(|utt| {
            let entities = utt
                .words
                .iter()
                .enumerate()
                .filter_map(|(i, w)| entity_type(lexicon, w).map(|t| (i, t)))
                .collect();
            NerExample {
                utt: utt.clone(),
                entities,
            }
        })
        .collect()
}

/// Task manifest records carrying the extra `label` field.
pub fn sa_records(task: &[SaExample]) -> Vec<ManifestRecord> {
    task.iter()
        .map(|ex| {
            let mut rec = ManifestRecord::from_utterance(&ex.utt);
            rec.label = Some(ex.label.to_string());
            rec
        })
        .collect()
}

/// Task manifest records carrying the extra `entities` field as
/// comma-separated `index:type` pairs.
pub fn ner_records(task: &[NerExample]) -> Vec<ManifestRecord> {
    task.iter()
        .map(|ex| {
            let mut rec = ManifestRecord::from_utterance(&ex.utt);
            rec.entities = Some(
                ex.entities
                    .iter()
                    .map(|(i, t)| format!("{i}:{t}"))
                    .collect::<Vec<_>>()
                    .join(","),
            );
            rec
        })
        .collect()
}

/// Fraction held by the most common label: the majority-class baseline.
pub fn majority_baseline(labels: &[usize], n_classes: usize) -> f64 {
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    *counts.iter().max().unwrap_or(&0) as f64 / labels.len().max(1) as f64
}

/// Full uLM or tLM rendering of a task input.
pub fn task_input_ids(
    builder: &SeqBuilder,
    utt: &AlignedUtterance,
    modality: Modality,
) -> Result<Vec<u32>, DownstreamError> {
    Ok(match modality {
        Modality::Speech => builder.build_ulm(utt)?.ids,
        Modality::Text => builder.build_tlm(utt)?.ids,
    })
}

// ---------------------------------------------------------------------------
// Classification with a self-attention pooling head
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead<T> {
    pub pool_w: Array1<T>,
    /// Per-class rows applied to the pooled vector.
    pub head_w: Array2<T>,
    pub head_b: Array1<T>,
}

impl<T: Scalar> ClassifierHead<T> {
    pub fn init(embed_dim: usize, n_classes: usize, seed: u64) -> Self {
        use rand_distr::{Distribution, Normal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).unwrap();
        Self {
            pool_w: Array1::from_shape_fn(embed_dim, |_| T::from_f64(normal.sample(&mut rng))),
            head_w: Array2::from_shape_fn((n_classes, embed_dim), |_| {
                T::from_f64(normal.sample(&mut rng))
            }),
            head_b: Array1::zeros(n_classes),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            pool_w: Array1::zeros(self.pool_w.len()),
            head_w: Array2::zeros(self.head_w.dim()),
            head_b: Array1::zeros(self.head_b.len()),
        }
    }

    fn add_assign(&mut self, other: &Self) {
        self.pool_w += &other.pool_w;
        self.head_w += &other.head_w;
        self.head_b += &other.head_b;
    }

    fn scale(&mut self, f: f64) {
        let f = T::from_f64(f);
        self.pool_w.mapv_inplace(|x| x * f);
        self.head_w.mapv_inplace(|x| x * f);
        self.head_b.mapv_inplace(|x| x * f);
    }

    fn norm2(&self) -> f64 {
        let mut n = 0.0;
        for &x in self.pool_w.iter().chain(self.head_w.iter()).chain(self.head_b.iter()) {
            n += Scalar::to_f64(x) * Scalar::to_f64(x);
        }
        n
    }
}

/// Convex pooling weights over positions: non-negative and summing to one.
pub fn pool_alphas<T: Scalar>(hidden: &Array2<T>, pool_w: &Array1<T>) -> Array1<T> {
    let scores = hidden.dot(pool_w);
    let maxv = scores.iter().cloned().fold(T::neg_infinity(), T::max);
    let mut alphas = scores.mapv(|s| (s - maxv).exp());
    let sum = alphas.sum();
    alphas.mapv_inplace(|a| a / sum);
    alphas
}

/// Class log-odds for one sequence.
pub fn classify<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    head: &ClassifierHead<T>,
    ids: &[u32],
) -> Result<(usize, Vec<f64>), DownstreamError> {
    let cache = forward_cache(params, cfg, ids, None)?;
    let alphas = pool_alphas(&cache.hidden, &head.pool_w);
    let pooled = cache.hidden.t().dot(&alphas);
    let logits = head.head_w.dot(&pooled) + &head.head_b;
    let best = logits
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap();
    Ok((best, logits.iter().map(|&v| Scalar::to_f64(v)).collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierCfg {
    pub lr: f64,
    pub updates: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
}

impl Default for ClassifierCfg {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            updates: 400,
            batch_size: 16,
            seed: 0,
            weight_decay: 0.01,
            grad_clip_norm: 1.0,
        }
    }
}

pub struct FinetunedClassifier<T> {
    pub params: ModelParams<T>,
    pub head: ClassifierHead<T>,
    /// Set when some class held less than 5% of the training data.
    pub imbalance_warning: bool,
}

struct HeadAdam<T> {
    m: ClassifierHead<T>,
    v: ClassifierHead<T>,
}

/// Cross-entropy fine-tuning of head plus backbone.
pub fn finetune_classifier<T: Scalar>(
    cfg: &ModelConfig,
    params: ModelParams<T>,
    data: &[(Vec<u32>, usize)],
    n_classes: usize,
    fc: &ClassifierCfg,
) -> Result<FinetunedClassifier<T>, DownstreamError> {
    if data.is_empty() {
        return Err(DownstreamError::EmptyTask);
    }
    let labels: Vec<usize> = data.iter().map(|(_, l)| *l).collect();
    let mut class_counts = vec![0usize; n_classes];
    for &l in &labels {
        class_counts[l] += 1;
    }
    let imbalance_warning = class_counts
        .iter()
        .any(|&c| (c as f64) < 0.05 * data.len() as f64);

    let mut params = params;
    let mut head = ClassifierHead::<T>::init(cfg.embed_dim, n_classes, fc.seed ^ 0x5EED);
    let mut state = crate::model::AdamState::new(cfg);
    let mut head_state = HeadAdam {
        m: head.zeros_like(),
        v: head.zeros_like(),
    };
    let tc = crate::model::TrainConfig {
        lr: fc.lr,
        weight_decay: fc.weight_decay,
        grad_clip_norm: fc.grad_clip_norm,
        warmup_steps: 0,
        seed: fc.seed,
        ..crate::model::TrainConfig::default()
    };

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(fc.seed);
    let mut cursor = 0usize;
    for step in 0..fc.updates {
        let mut batch = Vec::with_capacity(fc.batch_size);
        for _ in 0..fc.batch_size {
            if cursor == 0 {
                order.shuffle(&mut rng);
            }
            batch.push(order[cursor]);
            cursor = (cursor + 1) % order.len();
        }

        let results: Vec<(f64, ModelParams<T>, ClassifierHead<T>)> = batch
            .par_iter()
            .enumerate()
            .map(|(bi, &di)| {
                let (ids, label) = &data[di];
                let mut drop_rng = ChaCha8Rng::seed_from_u64(
                    fc.seed ^ step.wrapping_mul(0x9E37) ^ (bi as u64).wrapping_mul(0xBF58),
                );
                let cache = forward_cache(&params, cfg, ids, Some(&mut drop_rng))
                    .expect("task sequences fit the model");
                let t_len = ids.len();
                let alphas = pool_alphas(&cache.hidden, &head.pool_w);
                let pooled = cache.hidden.t().dot(&alphas);
                let logits = head.head_w.dot(&pooled) + &head.head_b;

                // Softmax cross-entropy.
                let maxv = logits.iter().cloned().fold(T::neg_infinity(), T::max);
                let mut probs = logits.mapv(|l| (l - maxv).exp());
                let z = probs.sum();
                probs.mapv_inplace(|p| p / z);
                let loss = -(Scalar::to_f64(probs[*label])).ln();

                let mut d_logits = probs;
                d_logits[*label] -= T::one();

                let mut head_grads = head.zeros_like();
                for c in 0..n_classes {
                    head_grads.head_b[c] = d_logits[c];
                    for j in 0..cfg.embed_dim {
                        head_grads.head_w[[c, j]] = d_logits[c] * pooled[j];
                    }
                }
                let d_pooled = head.head_w.t().dot(&d_logits);
                let d_alpha = cache.hidden.dot(&d_pooled);
                let inner: T = alphas
                    .iter()
                    .zip(d_alpha.iter())
                    .map(|(&a, &g)| a * g)
                    .sum();
                let d_scores = Array1::from_shape_fn(t_len, |t| alphas[t] * (d_alpha[t] - inner));
                head_grads.pool_w = cache.hidden.t().dot(&d_scores);

                let mut d_hidden = Array2::zeros(cache.hidden.dim());
                for t in 0..t_len {
                    for j in 0..cfg.embed_dim {
                        d_hidden[[t, j]] =
                            alphas[t] * d_pooled[j] + d_scores[t] * head.pool_w[j];
                    }
                }
                let mut grads = ModelParams::zeros(cfg);
                backward_from_hidden(&params, cfg, &cache, d_hidden, &mut grads);
                (loss, grads, head_grads)
            })
            .collect();

        let mut grads = ModelParams::zeros(cfg);
        let mut head_grads = head.zeros_like();
        let mut loss_sum = 0.0;
        for (l, g, hg) in results {
            loss_sum += l;
            grads.add_assign(&g);
            head_grads.add_assign(&hg);
        }
        let n = batch.len() as f64;
        grads.scale(1.0 / n);
        head_grads.scale(1.0 / n);
        if !loss_sum.is_finite() {
            return Err(DownstreamError::Model(ModelError::Diverged { step }));
        }

        // Joint global-norm clipping over backbone and head.
        let mut norm2 = 0.0;
        for s in grads.slices() {
            for &g in s {
                norm2 += Scalar::to_f64(g) * Scalar::to_f64(g);
            }
        }
        norm2 += head_grads.norm2();
        let norm = norm2.sqrt();
        if norm > fc.grad_clip_norm {
            let f = fc.grad_clip_norm / norm;
            grads.scale(f);
            head_grads.scale(f);
        }

        state.step(&mut params, &grads, &tc, fc.lr);
        adam_step_head(&mut head, &head_grads, &mut head_state, &tc, fc.lr, state.step);
    }
    Ok(FinetunedClassifier {
        params,
        head,
        imbalance_warning,
    })
}

fn adam_step_head<T: Scalar>(
    head: &mut ClassifierHead<T>,
    grads: &ClassifierHead<T>,
    state: &mut HeadAdam<T>,
    tc: &crate::model::TrainConfig,
    lr: f64,
    t: u64,
) {
    let b1 = T::from_f64(tc.adam_beta1);
    let b2 = T::from_f64(tc.adam_beta2);
    let one = T::one();
    let bc1 = T::from_f64(1.0 - tc.adam_beta1.powi(t as i32));
    let bc2 = T::from_f64(1.0 - tc.adam_beta2.powi(t as i32));
    let lr = T::from_f64(lr);
    let wd = T::from_f64(tc.weight_decay);
    let eps = T::from_f64(1e-8);
    let update = |p: &mut [T], g: &[T], m: &mut [T], v: &mut [T]| {
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            p[j] = p[j] - lr * (mhat / (vhat.sqrt() + eps) + wd * p[j]);
        }
    };
    update(
        head.pool_w.as_slice_mut().unwrap(),
        grads.pool_w.as_slice().unwrap(),
        state.m.pool_w.as_slice_mut().unwrap(),
        state.v.pool_w.as_slice_mut().unwrap(),
    );
    update(
        head.head_w.as_slice_mut().unwrap(),
        grads.head_w.as_slice().unwrap(),
        state.m.head_w.as_slice_mut().unwrap(),
        state.v.head_w.as_slice_mut().unwrap(),
    );
    update(
        head.head_b.as_slice_mut().unwrap(),
        grads.head_b.as_slice().unwrap(),
        state.m.head_b.as_slice_mut().unwrap(),
        state.v.head_b.as_slice_mut().unwrap(),
    );
}

pub fn eval_classifier<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    head: &ClassifierHead<T>,
    data: &[(Vec<u32>, usize)],
) -> Result<f64, DownstreamError> {
    if data.is_empty() {
        return Err(DownstreamError::EmptyTask);
    }
    let hits: usize = data
        .par_iter()
        .map(|(ids, label)| {
            let (pred, _) = classify(params, cfg, head, ids).expect("eval sequence fits");
            (pred == *label) as usize
        })
        .sum();
    Ok(hits as f64 / data.len() as f64)
}

// ---------------------------------------------------------------------------
// Tagged sequence generation
// ---------------------------------------------------------------------------

fn tag_ids(vocab: &JointVocab) -> Result<[u32; 4], DownstreamError> {
    let mut out = [0u32; 4];
    for (i, name) in NER_SPECIALS.iter().enumerate() {
        out[i] = vocab
            .extra_special(name)
            .map_err(|_| DownstreamError::MissingTags)?;
    }
    Ok(out)
}

/// Target rendering: the transcription with entity words wrapped in their
/// type's tag pair, as a text block.
pub fn ner_target_ids(
    builder: &SeqBuilder,
    ex: &NerExample,
) -> Result<Vec<u32>, DownstreamError> {
    let tags = tag_ids(builder.vocab)?;
    let mut ids = vec![Special::TextOpen.id()];
    let entity_at = |i: usize| ex.entities.iter().find(|(wi, _)| *wi == i).map(|(_, t)| *t);
    for (i, w) in ex.utt.words.iter().enumerate() {
        let tag = entity_at(i);
        if let Some(t) = tag {
            ids.push(tags[(t as usize - 1) * 2]);
        }
        ids.extend(builder.encode_words(std::slice::from_ref(w)));
        if let Some(t) = tag {
            ids.push(tags[(t as usize - 1) * 2 + 1]);
        }
    }
    ids.push(Special::TextClose.id());
    Ok(ids)
}

/// Input-then-output LM sequence with loss applied to the output part only.
pub fn ner_train_sequence(
    builder: &SeqBuilder,
    ex: &NerExample,
    input_modality: Modality,
) -> Result<TrainSequence, DownstreamError> {
    let input = task_input_ids(builder, &ex.utt, input_modality)?;
    let target = ner_target_ids(builder, ex)?;
    let predict_from = input.len();
    let mut ids = input;
    ids.extend(target);
    Ok(TrainSequence::prompted(ids, predict_from))
}

/// Check that entity tags in a target are balanced: properly opened, closed
/// by the matching tag, non-nested, and non-empty.
pub fn check_tag_balance(ids: &[u32], vocab: &JointVocab) -> Result<(), DownstreamError> {
    let tags = tag_ids(vocab)?;
    let mut open: Option<(u8, usize)> = None;
    for (pos, &id) in ids.iter().enumerate() {
        let bad = |msg: &str| DownstreamError::MalformedTarget(pos, msg.to_string());
        if id == tags[0] || id == tags[2] {
            let t = if id == tags[0] { 1 } else { 2 };
            if open.is_some() {
                return Err(bad("nested entity tag"));
            }
            open = Some((t, 0));
        } else if id == tags[1] || id == tags[3] {
            let t = if id == tags[1] { 1 } else { 2 };
            match open.take() {
                Some((ot, n)) if ot == t && n > 0 => {}
                Some((ot, _)) if ot != t => return Err(bad("mismatched closing tag")),
                Some(_) => return Err(bad("empty entity span")),
                None => return Err(bad("closing tag without opener")),
            }
        } else if let Some((_, ref mut n)) = open {
            *n += 1;
        }
    }
    if open.is_some() {
        return Err(DownstreamError::MalformedTarget(
            ids.len(),
            "unclosed entity tag".to_string(),
        ));
    }
    Ok(())
}

/// Extract (type, surface span) pairs from a decoded sequence. Malformed
/// spans are skipped rather than rejected, since hypotheses are model output.
pub fn extract_entities(
    ids: &[u32],
    builder: &SeqBuilder,
) -> Result<Vec<(u8, String)>, DownstreamError> {
    let tags = tag_ids(builder.vocab)?;
    let mut out = Vec::new();
    let mut open: Option<(u8, Vec<u32>)> = None;
    for &id in ids {
        if id == tags[0] || id == tags[2] {
            open = Some((if id == tags[0] { 1 } else { 2 }, Vec::new()));
        } else if id == tags[1] || id == tags[3] {
            let t = if id == tags[1] { 1 } else { 2 };
            if let Some((ot, span)) = open.take() {
                if ot == t && !span.is_empty() {
                    let pieces: Vec<crate::subword::Piece> = span
                        .iter()
                        .filter_map(|&s| builder.vocab.local_id(s))
                        .filter(|(m, _)| *m == Modality::Text)
                        .map(|(_, local)| crate::subword::Piece::Tok(local))
                        .collect();
                    if let Ok(surface) = builder.text_model.decode(&pieces) {
                        out.push((t, surface));
                    }
                }
            }
        } else if let Some((_, ref mut span)) = open {
            span.push(id);
        }
    }
    Ok(out)
}

/// Reference entities of an example as (type, surface) pairs.
pub fn reference_entities(ex: &NerExample) -> Vec<(u8, String)> {
    ex.entities
        .iter()
        .map(|&(i, t)| (t, ex.utt.words[i].clone()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Micro-averaged F1 over (entity-type, surface-span) pairs, with multiset
/// matching per sentence.
pub fn entity_f1(hyps: &[Vec<(u8, String)>], refs: &[Vec<(u8, String)>]) -> F1 {
    assert_eq!(hyps.len(), refs.len());
    let mut tp = 0usize;
    let mut n_hyp = 0usize;
    let mut n_ref = 0usize;
    for (h, r) in hyps.iter().zip(refs) {
        n_hyp += h.len();
        n_ref += r.len();
        let mut r_counts: std::collections::HashMap<&(u8, String), usize> =
            std::collections::HashMap::new();
        for e in r {
            *r_counts.entry(e).or_insert(0) += 1;
        }
        for e in h {
            if let Some(c) = r_counts.get_mut(e) {
                if *c > 0 {
                    *c -= 1;
                    tp += 1;
                }
            }
        }
    }
    let precision = if n_hyp == 0 { 0.0 } else { tp as f64 / n_hyp as f64 };
    let recall = if n_ref == 0 { 0.0 } else { tp as f64 / n_ref as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    F1 {
        precision,
        recall,
        f1,
    }
}

/// Beam decoding over an allow-set, stopping each hypothesis at `eos`.
/// Deterministic: ties break toward smaller token IDs.
pub fn beam_decode<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    prefix: &[u32],
    allow: &[bool],
    eos: u32,
    beam: usize,
    max_new: usize,
) -> Result<Vec<u32>, DownstreamError> {
    #[derive(Clone)]
    struct Hyp {
        cont: Vec<u32>,
        score: f64,
        done: bool,
    }
    let mut hyps = vec![Hyp {
        cont: Vec::new(),
        score: 0.0,
        done: false,
    }];
    for _ in 0..max_new {
        if hyps.iter().all(|h| h.done) {
            break;
        }
        let expansions: Vec<Vec<(u32, f64, usize)>> = hyps
            .par_iter()
            .enumerate()
            .map(|(hi, h)| {
                if h.done {
                    return vec![(eos, 0.0, hi)];
                }
                let mut ids = prefix.to_vec();
                ids.extend(&h.cont);
                if ids.len() >= cfg.max_seq_len {
                    return vec![(eos, 0.0, hi)];
                }
                let logits = next_token_logits(params, cfg, &ids).expect("prefix fits");
                // Log-softmax over the allow-set.
                let mut maxv = f64::NEG_INFINITY;
                for (j, &l) in logits.iter().enumerate() {
                    if allow[j] && Scalar::to_f64(l) > maxv {
                        maxv = Scalar::to_f64(l);
                    }
                }
                let mut z = 0.0;
                for (j, &l) in logits.iter().enumerate() {
                    if allow[j] {
                        z += (Scalar::to_f64(l) - maxv).exp();
                    }
                }
                let lse = maxv + z.ln();
                let mut cand: Vec<(u32, f64, usize)> = logits
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| allow[*j])
                    .map(|(j, &l)| (j as u32, Scalar::to_f64(l) - lse, hi))
                    .collect();
                cand.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
                cand.truncate(beam);
                cand
            })
            .collect();

        let mut next: Vec<Hyp> = Vec::new();
        for (hi, h) in hyps.iter().enumerate() {
            if h.done {
                next.push(h.clone());
                continue;
            }
            for &(tok, lp, _) in expansions[hi].iter().filter(|(_, _, i)| *i == hi) {
                let mut cont = h.cont.clone();
                let mut done = false;
                if tok == eos {
                    done = true;
                } else {
                    cont.push(tok);
                }
                next.push(Hyp {
                    cont,
                    score: h.score + lp,
                    done,
                });
            }
        }
        next.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
        next.truncate(beam);
        hyps = next;
    }
    let best = hyps
        .iter()
        .filter(|h| h.done)
        .max_by(|a, b| a.score.partial_cmp(&b.score).unwrap())
        .or_else(|| {
            hyps.iter()
                .max_by(|a, b| a.score.partial_cmp(&b.score).unwrap())
        })
        .expect("at least one hypothesis");
    Ok(best.cont.clone())
}

/// Allow-set for NER output decoding: text subwords, entity tags, and the
/// text closer.
pub fn ner_output_mask(vocab: &JointVocab) -> Result<Vec<bool>, DownstreamError> {
    let tags = tag_ids(vocab)?;
    let mut allow = vec![false; vocab.size()];
    for id in vocab.text_range() {
        allow[id as usize] = true;
    }
    for t in tags {
        allow[t as usize] = true;
    }
    allow[Special::TextClose.id() as usize] = true;
    Ok(allow)
}
