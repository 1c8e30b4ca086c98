//! Forward pass: embeddings, pre-LN attention/FFN blocks, log-probabilities,
//! loss, and continuation scoring.

use super::params::{ModelParams, NormParams};
use super::{ModelConfig, ModelError, Scalar};
use crate::vocab::ModalityMask;
use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub(crate) const LN_EPS: f64 = 1e-5;

/// One training item: token IDs plus the index of the first position whose
/// token counts as a prediction target. Pre-training predicts everything
/// (`predict_from = 1`); prompted tasks start at the output part.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSequence {
    pub ids: Vec<u32>,
    pub predict_from: usize,
}

impl TrainSequence {
    pub fn full(ids: Vec<u32>) -> Self {
        Self {
            ids,
            predict_from: 1,
        }
    }

    pub fn prompted(ids: Vec<u32>, predict_from: usize) -> Self {
        Self { ids, predict_from }
    }
}

pub(crate) struct LayerCache<T> {
    pub ln1_xhat: Array2<T>,
    pub ln1_istd: Array1<T>,
    pub n1: Array2<T>,
    pub q: Array2<T>,
    pub k: Array2<T>,
    pub v: Array2<T>,
    /// Per-head post-softmax attention, before dropout.
    pub att_pre: Vec<Array2<T>>,
    pub att_mask: Option<Vec<Array2<T>>>,
    /// Head outputs concatenated, before the output projection.
    pub concat: Array2<T>,
    pub attn_out_mask: Option<Array2<T>>,
    pub ln2_xhat: Array2<T>,
    pub ln2_istd: Array1<T>,
    pub n2: Array2<T>,
    pub ffn_pre: Array2<T>,
    pub ffn_act: Array2<T>,
    pub ffn_mask: Option<Array2<T>>,
}

/// Activations kept for the backward pass.
pub struct ForwardCache<T> {
    pub(crate) ids: Vec<u32>,
    pub(crate) emb_mask: Option<Array2<T>>,
    pub(crate) layers: Vec<LayerCache<T>>,
    pub(crate) final_xhat: Array2<T>,
    pub(crate) final_istd: Array1<T>,
    /// Final hidden states after the last layer norm, one row per position.
    pub hidden: Array2<T>,
}

fn check_ids(cfg: &ModelConfig, ids: &[u32]) -> Result<(), ModelError> {
    if ids.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    if ids.len() > cfg.max_seq_len {
        return Err(ModelError::TooLong {
            len: ids.len(),
            max: cfg.max_seq_len,
        });
    }
    for &id in ids {
        if id as usize >= cfg.vocab_size {
            return Err(ModelError::IdOutOfVocab {
                id,
                vocab: cfg.vocab_size,
            });
        }
    }
    Ok(())
}

/// Inverted-dropout mask: entries are `0` or `1/(1-p)`.
fn dropout_mask<T: Scalar>(rng: &mut ChaCha8Rng, shape: (usize, usize), p: f64) -> Array2<T> {
    let keep = 1.0 - p;
    let scale = T::from_f64(1.0 / keep);
    Array2::from_shape_fn(shape, |_| {
        if rng.gen::<f64>() < keep {
            scale
        } else {
            T::zero()
        }
    })
}

fn maybe_mask<T: Scalar>(
    rng: &mut Option<&mut ChaCha8Rng>,
    shape: (usize, usize),
    p: f64,
) -> Option<Array2<T>> {
    match rng {
        Some(r) if p > 0.0 => Some(dropout_mask(r, shape, p)),
        _ => None,
    }
}

/// Row-wise layer norm. Returns (output, normalized rows, inverse stds).
pub(crate) fn layer_norm<T: Scalar>(
    x: &Array2<T>,
    np: &NormParams<T>,
) -> (Array2<T>, Array2<T>, Array1<T>) {
    let (t_len, d) = x.dim();
    let dd = T::from_f64(d as f64);
    let eps = T::from_f64(LN_EPS);
    let mut xhat = Array2::zeros((t_len, d));
    let mut istd = Array1::zeros(t_len);
    for i in 0..t_len {
        let row = x.row(i);
        let mean = row.sum() / dd;
        let mut var = T::zero();
        for &v in row {
            var += (v - mean) * (v - mean);
        }
        var /= dd;
        let is = T::one() / (var + eps).sqrt();
        istd[i] = is;
        for j in 0..d {
            xhat[[i, j]] = (row[j] - mean) * is;
        }
    }
    let out = &xhat * &np.gain + &np.bias;
    (out, xhat, istd)
}

pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64(0.797_884_560_802_865_4);
    let a = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (T::one() + u.tanh())
}

pub(crate) fn gelu_prime<T: Scalar>(x: T) -> T {
    let c = T::from_f64(0.797_884_560_802_865_4);
    let a = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let du = c * (T::one() + T::from_f64(3.0 * 0.044715) * x * x);
    half * (T::one() + th) + half * x * (T::one() - th * th) * du
}

/// Run the stack, keeping every activation the backward pass needs.
/// Dropout is active only when an RNG is supplied and `dropout_prob > 0`.
pub(crate) fn forward_cache<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    ids: &[u32],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardCache<T>, ModelError> {
    check_ids(cfg, ids)?;
    let t_len = ids.len();
    let d = cfg.embed_dim;
    let p = cfg.dropout_prob;

    let mut x = Array2::<T>::zeros((t_len, d));
    for (t, &id) in ids.iter().enumerate() {
        let e = params.embed.row(id as usize);
        let pe = params.pos.row(t);
        for j in 0..d {
            x[[t, j]] = e[j] + pe[j];
        }
    }
    let emb_mask = maybe_mask::<T>(&mut rng, (t_len, d), p);
    if let Some(m) = &emb_mask {
        x *= m;
    }

    let n_heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut layers = Vec::with_capacity(cfg.n_layers);

    for lp in &params.layers {
        let (n1, ln1_xhat, ln1_istd) = layer_norm(&x, &lp.attn_norm);
        let q = n1.dot(&lp.wq) + &lp.bq;
        let k = n1.dot(&lp.wk) + &lp.bk;
        let v = n1.dot(&lp.wv) + &lp.bv;

        let mut concat = Array2::<T>::zeros((t_len, d));
        let mut att_pre = Vec::with_capacity(n_heads);
        let mut att_mask_heads = Vec::new();
        for h in 0..n_heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = q.slice(s![.., cols.clone()]);
            let kh = k.slice(s![.., cols.clone()]);
            let vh = v.slice(s![.., cols.clone()]);
            let mut scores = qh.dot(&kh.t());
            scores.mapv_inplace(|z| z * scale);

            // Causal softmax: row i attends to positions 0..=i only.
            let mut att = Array2::<T>::zeros((t_len, t_len));
            for i in 0..t_len {
                let mut maxv = scores[[i, 0]];
                for j in 1..=i {
                    if scores[[i, j]] > maxv {
                        maxv = scores[[i, j]];
                    }
                }
                let mut sum = T::zero();
                for j in 0..=i {
                    let e = (scores[[i, j]] - maxv).exp();
                    att[[i, j]] = e;
                    sum += e;
                }
                let inv = T::one() / sum;
                for j in 0..=i {
                    att[[i, j]] *= inv;
                }
            }

            let mask = maybe_mask::<T>(&mut rng, (t_len, t_len), p);
            let used = match &mask {
                Some(m) => &att * m,
                None => att.clone(),
            };
            concat.slice_mut(s![.., cols]).assign(&used.dot(&vh));
            att_pre.push(att);
            if let Some(m) = mask {
                att_mask_heads.push(m);
            }
        }
        let att_mask = if att_mask_heads.is_empty() {
            None
        } else {
            Some(att_mask_heads)
        };

        let mut attn_out = concat.dot(&lp.wo) + &lp.bo;
        let attn_out_mask = maybe_mask::<T>(&mut rng, (t_len, d), p);
        if let Some(m) = &attn_out_mask {
            attn_out *= m;
        }
        let resid1 = &x + &attn_out;

        let (n2, ln2_xhat, ln2_istd) = layer_norm(&resid1, &lp.ffn_norm);
        let ffn_pre = n2.dot(&lp.w1) + &lp.b1;
        let ffn_act = ffn_pre.mapv(gelu);
        let mut ffn_out = ffn_act.dot(&lp.w2) + &lp.b2;
        let ffn_mask = maybe_mask::<T>(&mut rng, (t_len, d), p);
        if let Some(m) = &ffn_mask {
            ffn_out *= m;
        }
        x = &resid1 + &ffn_out;

        layers.push(LayerCache {
            ln1_xhat,
            ln1_istd,
            n1,
            q,
            k,
            v,
            att_pre,
            att_mask,
            concat,
            attn_out_mask,
            ln2_xhat,
            ln2_istd,
            n2,
            ffn_pre,
            ffn_act,
            ffn_mask,
        });
    }

    let (hidden, final_xhat, final_istd) = layer_norm(&x, &params.final_norm);
    Ok(ForwardCache {
        ids: ids.to_vec(),
        emb_mask,
        layers,
        final_xhat,
        final_istd,
        hidden,
    })
}

/// Project hidden states to vocabulary logits, via the tied embedding
/// transpose or the separate output matrix.
pub(crate) fn project_logits<T: Scalar>(
    params: &ModelParams<T>,
    hidden: &Array2<T>,
) -> Array2<T> {
    match &params.out_proj {
        Some(u) => hidden.dot(&u.t()),
        None => hidden.dot(&params.embed.t()),
    }
}

fn log_softmax_rows<T: Scalar>(logits: &mut Array2<T>) {
    for mut row in logits.rows_mut() {
        let mut maxv = row[0];
        for &v in row.iter() {
            if v > maxv {
                maxv = v;
            }
        }
        let mut sum = T::zero();
        for &v in row.iter() {
            sum += (v - maxv).exp();
        }
        let lse = maxv + sum.ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
}

/// Final hidden states in eval mode (no dropout).
pub fn forward_hidden<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    ids: &[u32],
) -> Result<Array2<T>, ModelError> {
    Ok(forward_cache(params, cfg, ids, None)?.hidden)
}

/// Per-position next-token log-probability rows, eval mode. Row `j` is the
/// distribution over the token at position `j+1` given positions `0..=j`.
pub fn forward_logprobs<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    ids: &[u32],
) -> Result<Array2<T>, ModelError> {
    let cache = forward_cache(params, cfg, ids, None)?;
    let mut logits = project_logits(params, &cache.hidden);
    log_softmax_rows(&mut logits);
    Ok(logits)
}

/// Logits for the next token after the last position, eval mode.
pub fn next_token_logits<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    ids: &[u32],
) -> Result<Array1<T>, ModelError> {
    let cache = forward_cache(params, cfg, ids, None)?;
    let last = cache.hidden.row(ids.len() - 1);
    let logits = match &params.out_proj {
        Some(u) => u.dot(&last),
        None => params.embed.dot(&last),
    };
    Ok(logits)
}

/// Per-target-position loss terms: `terms[t]` is `-log p(ids[t] | ids[..t])`
/// for counted positions and `None` for excluded ones (position 0, positions
/// before `predict_from`, padding).
pub fn nll_loss_terms<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    seq: &TrainSequence,
) -> Result<Vec<Option<f64>>, ModelError> {
    let lp = forward_logprobs(params, cfg, &seq.ids)?;
    let mut terms = vec![None; seq.ids.len()];
    for t in seq.predict_from.max(1)..seq.ids.len() {
        if cfg.pad_id == Some(seq.ids[t]) {
            continue;
        }
        terms[t] = Some(-lp[[t - 1, seq.ids[t] as usize]].to_f64());
    }
    Ok(terms)
}

pub(crate) fn nll_sum<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    seq: &TrainSequence,
) -> Result<(f64, usize), ModelError> {
    let terms = nll_loss_terms(params, cfg, seq)?;
    let mut sum = 0.0;
    let mut count = 0;
    for t in terms.into_iter().flatten() {
        sum += t;
        count += 1;
    }
    Ok((sum, count))
}

/// Mean negative log-likelihood over every counted target in the batch.
pub fn nll_loss<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    batch: &[TrainSequence],
) -> Result<f64, ModelError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for seq in batch {
        let (s, c) = nll_sum(params, cfg, seq)?;
        sum += s;
        count += c;
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok(sum / count as f64)
}

/// Total log-probability of a continuation given a prompt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationScore {
    pub logprob: f64,
    /// True when some continuation token fell outside the modality mask; the
    /// score is then minus infinity rather than an error.
    pub masked_out: bool,
}

/// Sum over continuation positions of `log p(token | prefix)`. With a mask,
/// each row is renormalized over the allowed tokens first; a mask covering
/// the whole vocabulary is skipped so it equals the unmasked score exactly.
pub fn score_continuation<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    prompt: &[u32],
    cont: &[u32],
    mask: Option<&ModalityMask>,
) -> Result<ContinuationScore, ModelError> {
    if cont.is_empty() {
        return Ok(ContinuationScore {
            logprob: 0.0,
            masked_out: false,
        });
    }
    if prompt.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    let mut ids = Vec::with_capacity(prompt.len() + cont.len());
    ids.extend_from_slice(prompt);
    ids.extend_from_slice(cont);
    let lp = forward_logprobs(params, cfg, &ids)?;

    let active_mask = mask.filter(|m| m.allowed_count() < cfg.vocab_size);
    let mut total = 0.0;
    let mut masked_out = false;
    for (p, &tok) in cont.iter().enumerate() {
        let row = lp.row(prompt.len() - 1 + p);
        match active_mask {
            None => total += row[tok as usize].to_f64(),
            Some(m) => {
                if !m.allows(tok) {
                    masked_out = true;
                    continue;
                }
                // log-sum-exp over the allowed set, in f64.
                let mut maxv = f64::NEG_INFINITY;
                for (j, &v) in row.iter().enumerate() {
                    if m.allows(j as u32) && v.to_f64() > maxv {
                        maxv = v.to_f64();
                    }
                }
                let mut sum = 0.0;
                for (j, &v) in row.iter().enumerate() {
                    if m.allows(j as u32) {
                        sum += (v.to_f64() - maxv).exp();
                    }
                }
                total += row[tok as usize].to_f64() - (maxv + sum.ln());
            }
        }
    }
    if masked_out {
        return Ok(ContinuationScore {
            logprob: f64::NEG_INFINITY,
            masked_out: true,
        });
    }
    Ok(ContinuationScore {
        logprob: total,
        masked_out: false,
    })
}
