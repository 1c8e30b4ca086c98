//! Analytic gradients of the mean NLL, mirroring the forward pass step by
//! step. Verified against central finite differences in the test suite.

use super::forward::{forward_cache, gelu_prime, project_logits, ForwardCache, TrainSequence};
use super::params::{ModelParams, NormParams};
use super::{ModelConfig, ModelError, Scalar};
use ndarray::{s, Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;

fn layer_norm_backward<T: Scalar>(
    d_out: &Array2<T>,
    xhat: &Array2<T>,
    istd: &Array1<T>,
    np: &NormParams<T>,
    d_gain: &mut Array1<T>,
    d_bias: &mut Array1<T>,
) -> Array2<T> {
    let (t_len, d) = d_out.dim();
    let dd = T::from_f64(d as f64);
    let mut dx = Array2::zeros((t_len, d));
    for i in 0..t_len {
        let mut m1 = T::zero();
        let mut m2 = T::zero();
        for j in 0..d {
            let dxh = d_out[[i, j]] * np.gain[j];
            m1 += dxh;
            m2 += dxh * xhat[[i, j]];
        }
        m1 /= dd;
        m2 /= dd;
        for j in 0..d {
            let dxh = d_out[[i, j]] * np.gain[j];
            dx[[i, j]] = (dxh - m1 - xhat[[i, j]] * m2) * istd[i];
            d_gain[j] += d_out[[i, j]] * xhat[[i, j]];
            d_bias[j] += d_out[[i, j]];
        }
    }
    dx
}

/// Backpropagate from a gradient on the final hidden states down to the
/// embeddings, accumulating into `grads`. Shared by the LM loss and the
/// classification head.
pub(crate) fn backward_from_hidden<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    cache: &ForwardCache<T>,
    d_hidden: Array2<T>,
    grads: &mut ModelParams<T>,
) {
    let n_heads = cfg.n_heads;
    let dh = cfg.head_dim();
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());

    let mut d = layer_norm_backward(
        &d_hidden,
        &cache.final_xhat,
        &cache.final_istd,
        &params.final_norm,
        &mut grads.final_norm.gain,
        &mut grads.final_norm.bias,
    );

    for li in (0..cache.layers.len()).rev() {
        let lc = &cache.layers[li];
        let lp = &params.layers[li];
        let gl = &mut grads.layers[li];
        let t_len = d.nrows();

        // FFN block, in reverse.
        let mut d_ffn_out = d.clone();
        if let Some(m) = &lc.ffn_mask {
            d_ffn_out *= m;
        }
        gl.b2 += &d_ffn_out.sum_axis(Axis(0));
        gl.w2 += &lc.ffn_act.t().dot(&d_ffn_out);
        let d_act = d_ffn_out.dot(&lp.w2.t());
        let mut d_pre = d_act;
        d_pre.zip_mut_with(&lc.ffn_pre, |g, &x| *g *= gelu_prime(x));
        gl.b1 += &d_pre.sum_axis(Axis(0));
        gl.w1 += &lc.n2.t().dot(&d_pre);
        let d_n2 = d_pre.dot(&lp.w1.t());
        let d_ln2in = layer_norm_backward(
            &d_n2,
            &lc.ln2_xhat,
            &lc.ln2_istd,
            &lp.ffn_norm,
            &mut gl.ffn_norm.gain,
            &mut gl.ffn_norm.bias,
        );
        let d_resid1 = &d + &d_ln2in;

        // Attention block, in reverse.
        let mut d_o = d_resid1.clone();
        if let Some(m) = &lc.attn_out_mask {
            d_o *= m;
        }
        gl.bo += &d_o.sum_axis(Axis(0));
        gl.wo += &lc.concat.t().dot(&d_o);
        let d_concat = d_o.dot(&lp.wo.t());

        let d_model = cfg.embed_dim;
        let mut d_q = Array2::<T>::zeros((t_len, d_model));
        let mut d_k = Array2::<T>::zeros((t_len, d_model));
        let mut d_v = Array2::<T>::zeros((t_len, d_model));
        for h in 0..n_heads {
            let cols = h * dh..(h + 1) * dh;
            let d_oh = d_concat.slice(s![.., cols.clone()]);
            let qh = lc.q.slice(s![.., cols.clone()]);
            let kh = lc.k.slice(s![.., cols.clone()]);
            let vh = lc.v.slice(s![.., cols.clone()]);
            let att = &lc.att_pre[h];
            let att_used = match &lc.att_mask {
                Some(ms) => att * &ms[h],
                None => att.clone(),
            };

            let d_att_used = d_oh.dot(&vh.t());
            d_v.slice_mut(s![.., cols.clone()])
                .assign(&att_used.t().dot(&d_oh));
            let d_att_pre = match &lc.att_mask {
                Some(ms) => d_att_used * &ms[h],
                None => d_att_used,
            };

            // Softmax backward over the causal band.
            let mut d_scores = Array2::<T>::zeros((t_len, t_len));
            for i in 0..t_len {
                let mut dot = T::zero();
                for j in 0..=i {
                    dot += d_att_pre[[i, j]] * att[[i, j]];
                }
                for j in 0..=i {
                    d_scores[[i, j]] = att[[i, j]] * (d_att_pre[[i, j]] - dot) * scale;
                }
            }
            d_q.slice_mut(s![.., cols.clone()]).assign(&d_scores.dot(&kh));
            d_k.slice_mut(s![.., cols]).assign(&d_scores.t().dot(&qh));
        }

        gl.bq += &d_q.sum_axis(Axis(0));
        gl.wq += &lc.n1.t().dot(&d_q);
        gl.bk += &d_k.sum_axis(Axis(0));
        gl.wk += &lc.n1.t().dot(&d_k);
        gl.bv += &d_v.sum_axis(Axis(0));
        gl.wv += &lc.n1.t().dot(&d_v);
        let d_n1 = d_q.dot(&lp.wq.t()) + d_k.dot(&lp.wk.t()) + d_v.dot(&lp.wv.t());
        let d_ln1in = layer_norm_backward(
            &d_n1,
            &lc.ln1_xhat,
            &lc.ln1_istd,
            &lp.attn_norm,
            &mut gl.attn_norm.gain,
            &mut gl.attn_norm.bias,
        );
        d = d_resid1 + d_ln1in;
    }

    // Embedding and positional scatter.
    let mut d_x0 = d;
    if let Some(m) = &cache.emb_mask {
        d_x0 *= m;
    }
    for (t, &id) in cache.ids.iter().enumerate() {
        let row = d_x0.row(t);
        let mut erow = grads.embed.row_mut(id as usize);
        erow += &row;
        let mut prow = grads.pos.row_mut(t);
        prow += &row;
    }
}

/// Gradients of the sum-NLL of one sequence, accumulated into `grads`.
/// Returns the loss sum and the number of counted targets.
pub(crate) fn accumulate_sequence_grads<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    seq: &TrainSequence,
    rng: Option<&mut ChaCha8Rng>,
    grads: &mut ModelParams<T>,
) -> Result<(f64, usize), ModelError> {
    let cache = forward_cache(params, cfg, &seq.ids, rng)?;
    let t_len = seq.ids.len();
    let logits = project_logits(params, &cache.hidden);

    let mut d_logits = Array2::<T>::zeros((t_len, cfg.vocab_size));
    let mut loss_sum = 0.0;
    let mut count = 0usize;
    for t in seq.predict_from.max(1)..t_len {
        let target = seq.ids[t];
        if cfg.pad_id == Some(target) {
            continue;
        }
        let row = logits.row(t - 1);
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
        loss_sum += (lse - row[target as usize]).to_f64();
        count += 1;
        let mut drow = d_logits.row_mut(t - 1);
        for (j, g) in drow.iter_mut().enumerate() {
            *g = (row[j] - lse).exp();
        }
        drow[target as usize] -= T::one();
    }
    if count == 0 {
        return Ok((0.0, 0));
    }

    // Output projection side. With tied embeddings this lands on `embed`.
    let d_hidden = match &params.out_proj {
        Some(u) => {
            let g = grads.out_proj.as_mut().expect("untied grads have out_proj");
            *g += &d_logits.t().dot(&cache.hidden);
            d_logits.dot(u)
        }
        None => {
            grads.embed += &d_logits.t().dot(&cache.hidden);
            d_logits.dot(&params.embed)
        }
    };
    backward_from_hidden(params, cfg, &cache, d_hidden, grads);
    Ok((loss_sum, count))
}

/// Gradient of [`super::nll_loss`] with respect to every parameter, plus the
/// loss value itself. Eval mode (no dropout).
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    batch: &[TrainSequence],
) -> Result<(f64, ModelParams<T>), ModelError> {
    let mut grads = ModelParams::zeros(cfg);
    let mut sum = 0.0;
    let mut count = 0usize;
    for seq in batch {
        let (s, c) = accumulate_sequence_grads(params, cfg, seq, None, &mut grads)?;
        sum += s;
        count += c;
    }
    if count == 0 {
        return Ok((0.0, grads));
    }
    grads.scale(1.0 / count as f64);
    Ok((sum / count as f64, grads))
}
