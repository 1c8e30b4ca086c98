//! Modality-constrained generation: temperature scaling, masking with
//! renormalization, and nucleus (top-p) truncation.

use crate::model::{next_token_logits, ModelConfig, ModelError, ModelParams, Scalar};
use crate::vocab::ModalityMask;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("temperature must be > 0, got {0}")]
    BadTemperature(f64),
    #[error("nucleus_p must be in (0, 1], got {0}")]
    BadNucleusP(f64),
    #[error("empty allow-set")]
    EmptyAllowSet,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleParams {
    pub temperature: f64,
    pub nucleus_p: f64,
    pub max_new: usize,
}

impl Default for SampleParams {
    fn default() -> Self {
        Self {
            temperature: 0.6,
            nucleus_p: 0.95,
            max_new: 48,
        }
    }
}

/// One sampling step over (optionally masked) logits. Tokens are
/// probability-sorted with ties broken by token ID, the smallest prefix with
/// cumulative mass >= nucleus_p is kept and renormalized.
fn sample_from_logits(
    logits: &[f64],
    mask: Option<&ModalityMask>,
    sp: &SampleParams,
    rng: &mut ChaCha8Rng,
) -> u32 {
    let mut cand: Vec<(u32, f64)> = logits
        .iter()
        .enumerate()
        .filter(|(id, _)| mask.is_none_or(|m| m.allows(*id as u32)))
        .map(|(id, &l)| (id as u32, l / sp.temperature))
        .collect();
    let maxl = cand.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for c in &mut cand {
        c.1 = (c.1 - maxl).exp();
        total += c.1;
    }
    for c in &mut cand {
        c.1 /= total;
    }
    cand.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

    let mut cut = cand.len();
    let mut cum = 0.0;
    for (i, &(_, p)) in cand.iter().enumerate() {
        cum += p;
        if cum >= sp.nucleus_p {
            cut = i + 1;
            break;
        }
    }
    let kept = &cand[..cut];
    let kept_mass: f64 = kept.iter().map(|c| c.1).sum();
    let u = rng.gen::<f64>() * kept_mass;
    let mut acc = 0.0;
    for &(id, p) in kept {
        acc += p;
        if u < acc {
            return id;
        }
    }
    kept.last().expect("nucleus keeps at least one token").0
}

/// Sample a continuation after `prompt`. With a mask, generation is
/// restricted to the allow-set and stops when the target modality's closer is
/// drawn (the closer is not returned); otherwise it runs to `max_new` or the
/// context limit.
pub fn sample_continuation<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    prompt: &[u32],
    mask: Option<&ModalityMask>,
    sp: &SampleParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<u32>, SampleError> {
    if sp.temperature <= 0.0 {
        return Err(SampleError::BadTemperature(sp.temperature));
    }
    if !(sp.nucleus_p > 0.0 && sp.nucleus_p <= 1.0) {
        return Err(SampleError::BadNucleusP(sp.nucleus_p));
    }
    if let Some(m) = mask {
        if m.allowed_count() == 0 {
            return Err(SampleError::EmptyAllowSet);
        }
    }
    let mut ids = prompt.to_vec();
    let mut out = Vec::new();
    for _ in 0..sp.max_new {
        if ids.len() >= cfg.max_seq_len {
            break;
        }
        let logits = next_token_logits(params, cfg, &ids)?;
        let logits_f64: Vec<f64> = logits.iter().map(|&v| Scalar::to_f64(v)).collect();
        let tok = sample_from_logits(&logits_f64, mask, sp, rng);
        if let Some(m) = mask {
            if tok == m.closer {
                break;
            }
        }
        ids.push(tok);
        out.push(tok);
    }
    Ok(out)
}
