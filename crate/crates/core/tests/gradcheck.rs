//! Oracle tests for the model: central finite differences against the
//! analytic backward pass, an independent straight-line forward
//! reimplementation, causality by perturbation, and scoring identities.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unitext::model::{
    backward, forward_logprobs, nll_loss, nll_loss_terms, score_continuation, ModelConfig,
    ModelParams, TrainSequence,
};
use unitext::vocab::{Modality, ModalityMask};

fn small_cfg() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        embed_dim: 12,
        ffn_dim: 20,
        dropout_prob: 0.0,
        max_seq_len: 16,
        vocab_size: 17,
        tie_embeddings: true,
        pad_id: None,
    }
}

fn random_batch(cfg: &ModelConfig, rng: &mut ChaCha8Rng, n: usize, len: usize) -> Vec<TrainSequence> {
    (0..n)
        .map(|_| {
            TrainSequence::full(
                (0..len)
                    .map(|_| rng.gen_range(0..cfg.vocab_size as u32))
                    .collect(),
            )
        })
        .collect()
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Central finite differences on 200 random coordinates of a 2-layer 64-bit
/// model: max relative error < 1e-4.
#[test]
fn analytic_gradients_match_finite_differences() {
    let cfg = small_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let params = ModelParams::<f64>::init(&cfg, 42);
    let batch = random_batch(&cfg, &mut rng, 3, 9);

    let (_, grads) = backward(&params, &cfg, &batch).unwrap();

    let h = 1e-5;
    let total: usize = params.slices().iter().map(|s| s.len()).sum();
    let n_tensors = params.slices().len();
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let ti = rng.gen_range(0..n_tensors);
        let ei = {
            let len = params.slices()[ti].len();
            rng.gen_range(0..len)
        };
        let mut plus = params.clone();
        plus.slices_mut()[ti][ei] += h;
        let mut minus = params.clone();
        minus.slices_mut()[ti][ei] -= h;
        let fd = (nll_loss(&plus, &cfg, &batch).unwrap() - nll_loss(&minus, &cfg, &batch).unwrap())
            / (2.0 * h);
        let ana = grads.slices()[ti][ei];
        let err = relative_error(fd, ana);
        if err > worst {
            worst = err;
        }
        assert!(
            err < 1e-4,
            "tensor {ti} elem {ei}: fd {fd} vs analytic {ana} (rel err {err})"
        );
    }
    assert!(worst < 1e-4, "worst relative error {worst} over {total} params");
}

/// Same oracle for the untied output projection path.
#[test]
fn untied_gradients_match_finite_differences() {
    let cfg = ModelConfig {
        tie_embeddings: false,
        n_layers: 1,
        ..small_cfg()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let params = ModelParams::<f64>::init(&cfg, 7);
    let batch = random_batch(&cfg, &mut rng, 2, 7);
    let (_, grads) = backward(&params, &cfg, &batch).unwrap();
    let h = 1e-5;
    let n_tensors = params.slices().len();
    for _ in 0..80 {
        let ti = rng.gen_range(0..n_tensors);
        let ei = rng.gen_range(0..params.slices()[ti].len());
        let mut plus = params.clone();
        plus.slices_mut()[ti][ei] += h;
        let mut minus = params.clone();
        minus.slices_mut()[ti][ei] -= h;
        let fd = (nll_loss(&plus, &cfg, &batch).unwrap() - nll_loss(&minus, &cfg, &batch).unwrap())
            / (2.0 * h);
        let ana = grads.slices()[ti][ei];
        assert!(
            relative_error(fd, ana) < 1e-4,
            "tensor {ti} elem {ei}: fd {fd} vs analytic {ana}"
        );
    }
}

/// Tied embeddings accumulate both the lookup and projection contributions;
/// an untied model with equal matrices must agree.
#[test]
fn tied_gradient_equals_untied_sum() {
    let tied_cfg = small_cfg();
    let untied_cfg = ModelConfig {
        tie_embeddings: false,
        ..small_cfg()
    };
    let tied = ModelParams::<f64>::init(&tied_cfg, 9);
    let mut untied = ModelParams::<f64>::init(&untied_cfg, 9);
    // Make the untied model identical: copy everything, tie weights manually.
    untied.embed = tied.embed.clone();
    untied.pos = tied.pos.clone();
    untied.layers = tied.layers.clone();
    untied.final_norm = tied.final_norm.clone();
    untied.out_proj = Some(tied.embed.clone());

    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let batch = random_batch(&tied_cfg, &mut rng, 2, 8);

    let tied_lp = forward_logprobs(&tied, &tied_cfg, &batch[0].ids).unwrap();
    let untied_lp = forward_logprobs(&untied, &untied_cfg, &batch[0].ids).unwrap();
    for (a, b) in tied_lp.iter().zip(untied_lp.iter()) {
        assert!((a - b).abs() < 1e-14);
    }

    let (loss_t, g_tied) = backward(&tied, &tied_cfg, &batch).unwrap();
    let (loss_u, g_untied) = backward(&untied, &untied_cfg, &batch).unwrap();
    assert!((loss_t - loss_u).abs() < 1e-12);
    let combined = &g_untied.embed + g_untied.out_proj.as_ref().unwrap();
    for (a, b) in g_tied.embed.iter().zip(combined.iter()) {
        assert!((a - b).abs() < 1e-10, "tied {a} vs untied sum {b}");
    }
}

/// Perturbing the token at position j never changes rows before j.
#[test]
fn causal_mask_verified_by_perturbation() {
    let cfg = small_cfg();
    let params = ModelParams::<f64>::init(&cfg, 4);
    let ids: Vec<u32> = vec![3, 1, 4, 1, 5, 9, 2, 6];
    let base = forward_logprobs(&params, &cfg, &ids).unwrap();
    for j in 1..ids.len() {
        let mut perturbed = ids.clone();
        perturbed[j] = (perturbed[j] + 1) % cfg.vocab_size as u32;
        let lp = forward_logprobs(&params, &cfg, &perturbed).unwrap();
        for r in 0..j {
            for v in 0..cfg.vocab_size {
                let diff = (base[[r, v]] - lp[[r, v]]).abs();
                assert!(
                    diff < 1e-12,
                    "row {r} changed by perturbation at {j}: diff {diff}"
                );
            }
        }
    }
}

/// Every log-probability row normalizes.
#[test]
fn softmax_rows_normalize() {
    let cfg = small_cfg();
    let params = ModelParams::<f64>::init(&cfg, 11);
    let ids: Vec<u32> = vec![0, 5, 2, 8, 13];
    let lp = forward_logprobs(&params, &cfg, &ids).unwrap();
    for row in lp.rows() {
        let lse: f64 = row.iter().map(|v| v.exp()).sum::<f64>().ln();
        assert!(lse.abs() < 1e-6, "row off by {lse}");
    }
}

/// Straight-line single-layer reference computation, written with plain loops
/// and no shared code paths.
#[test]
fn matches_straight_line_reference_model() {
    let cfg = ModelConfig {
        n_layers: 1,
        n_heads: 1,
        embed_dim: 4,
        ffn_dim: 6,
        dropout_prob: 0.0,
        max_seq_len: 8,
        vocab_size: 2,
        tie_embeddings: true,
        pad_id: None,
    };
    let params = ModelParams::<f64>::init(&cfg, 77);
    let ids: Vec<u32> = vec![0, 1, 1, 0, 1];
    let got = forward_logprobs(&params, &cfg, &ids).unwrap();

    // Reference computation.
    let t_len = ids.len();
    let d = cfg.embed_dim;
    let f = cfg.ffn_dim;
    let v = cfg.vocab_size;
    let eps = 1e-5;
    let gelu = |x: f64| {
        0.5 * x
            * (1.0 + (0.7978845608028654 * (x + 0.044715 * x * x * x)).tanh())
    };
    let ln = |row: &[f64], gain: &[f64], bias: &[f64]| -> Vec<f64> {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + eps).sqrt();
        (0..d)
            .map(|j| (row[j] - mean) * istd * gain[j] + bias[j])
            .collect()
    };
    let lp0 = &params.layers[0];
    let matvec = |m: &Array2<f64>, x: &[f64], out_dim: usize, b: &[f64]| -> Vec<f64> {
        // y = x^T M + b, with M of shape (len(x), out_dim).
        (0..out_dim)
            .map(|j| x.iter().enumerate().map(|(i, xi)| xi * m[[i, j]]).sum::<f64>() + b[j])
            .collect()
    };

    let mut x: Vec<Vec<f64>> = (0..t_len)
        .map(|t| {
            (0..d)
                .map(|j| params.embed[[ids[t] as usize, j]] + params.pos[[t, j]])
                .collect()
        })
        .collect();

    let gain1: Vec<f64> = lp0.attn_norm.gain.to_vec();
    let bias1: Vec<f64> = lp0.attn_norm.bias.to_vec();
    let n1: Vec<Vec<f64>> = x.iter().map(|r| ln(r, &gain1, &bias1)).collect();
    let q: Vec<Vec<f64>> = n1.iter().map(|r| matvec(&lp0.wq, r, d, lp0.bq.as_slice().unwrap())).collect();
    let k: Vec<Vec<f64>> = n1.iter().map(|r| matvec(&lp0.wk, r, d, lp0.bk.as_slice().unwrap())).collect();
    let vv: Vec<Vec<f64>> = n1.iter().map(|r| matvec(&lp0.wv, r, d, lp0.bv.as_slice().unwrap())).collect();
    let scale = 1.0 / (d as f64).sqrt(); // single head: head_dim == d
    let mut attn_out: Vec<Vec<f64>> = Vec::new();
    for i in 0..t_len {
        let scores: Vec<f64> = (0..=i)
            .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() * scale)
            .collect();
        let maxv = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - maxv).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let mut oh = vec![0.0; d];
        for (j, e) in exps.iter().enumerate() {
            let w = e / sum;
            for c in 0..d {
                oh[c] += w * vv[j][c];
            }
        }
        attn_out.push(matvec(&lp0.wo, &oh, d, lp0.bo.as_slice().unwrap()));
    }
    for i in 0..t_len {
        for j in 0..d {
            x[i][j] += attn_out[i][j];
        }
    }
    let gain2: Vec<f64> = lp0.ffn_norm.gain.to_vec();
    let bias2: Vec<f64> = lp0.ffn_norm.bias.to_vec();
    for i in 0..t_len {
        let n2 = ln(&x[i], &gain2, &bias2);
        let pre = matvec(&lp0.w1, &n2, f, lp0.b1.as_slice().unwrap());
        let act: Vec<f64> = pre.iter().map(|&z| gelu(z)).collect();
        let out = matvec(&lp0.w2, &act, d, lp0.b2.as_slice().unwrap());
        for j in 0..d {
            x[i][j] += out[j];
        }
    }
    let gain_f: Vec<f64> = params.final_norm.gain.to_vec();
    let bias_f: Vec<f64> = params.final_norm.bias.to_vec();
    for (i, row) in x.iter().enumerate() {
        let h = ln(row, &gain_f, &bias_f);
        let logits: Vec<f64> = (0..v)
            .map(|w| (0..d).map(|j| h[j] * params.embed[[w, j]]).sum::<f64>())
            .collect();
        let maxv = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = maxv + logits.iter().map(|l| (l - maxv).exp()).sum::<f64>().ln();
        for w in 0..v {
            let want = logits[w] - lse;
            let diff = (got[[i, w]] - want).abs();
            assert!(diff < 1e-10, "position {i} vocab {w}: diff {diff}");
        }
    }
}

#[test]
fn uniform_output_loss_is_ln_vocab() {
    let cfg = small_cfg();
    let mut params = ModelParams::<f64>::init(&cfg, 3);
    // Zero embeddings make every logit zero under tied projection.
    params.embed.fill(0.0);
    let batch = vec![TrainSequence::full(vec![1, 2, 3, 4])];
    let loss = nll_loss(&params, &cfg, &batch).unwrap();
    assert!((loss - (cfg.vocab_size as f64).ln()).abs() < 1e-9);
}

#[test]
fn loss_matches_manual_per_position_sum() {
    let cfg = small_cfg();
    let params = ModelParams::<f64>::init(&cfg, 5);
    let ids: Vec<u32> = vec![2, 7, 1, 16, 4];
    let seq = TrainSequence::prompted(ids.clone(), 2);
    let lp = forward_logprobs(&params, &cfg, &ids).unwrap();
    let mut manual = 0.0;
    let mut n = 0;
    for t in 2..ids.len() {
        manual += -lp[[t - 1, ids[t] as usize]];
        n += 1;
    }
    manual /= n as f64;
    let got = nll_loss(&params, &cfg, &[seq.clone()]).unwrap();
    assert!((got - manual).abs() < 1e-12);

    let terms = nll_loss_terms(&params, &cfg, &seq).unwrap();
    assert!(terms[0].is_none() && terms[1].is_none());
    assert!(terms[2..].iter().all(|t| t.is_some()));
}

#[test]
fn empty_predicted_region_has_zero_gradients() {
    let cfg = small_cfg();
    let params = ModelParams::<f64>::init(&cfg, 6);
    let seq = TrainSequence::prompted(vec![1, 2, 3], 3);
    let (loss, grads) = backward(&params, &cfg, &[seq]).unwrap();
    assert_eq!(loss, 0.0);
    for s in grads.slices() {
        assert!(s.iter().all(|&g| g == 0.0));
    }
}

#[test]
fn score_continuation_identities() {
    let cfg = small_cfg();
    let params = ModelParams::<f64>::init(&cfg, 8);
    let prompt: Vec<u32> = vec![1, 2, 3];
    let cont: Vec<u32> = vec![4, 5];

    // Empty continuation scores zero.
    let empty = score_continuation(&params, &cfg, &prompt, &[], None).unwrap();
    assert_eq!(empty.logprob, 0.0);

    // Equals the gathered forward_logprobs rows.
    let ids: Vec<u32> = prompt.iter().chain(&cont).copied().collect();
    let lp = forward_logprobs(&params, &cfg, &ids).unwrap();
    let manual: f64 = (0..cont.len())
        .map(|p| lp[[prompt.len() - 1 + p, cont[p] as usize]])
        .sum();
    let got = score_continuation(&params, &cfg, &prompt, &cont, None).unwrap();
    assert!((got.logprob - manual).abs() < 1e-12);
    assert!(!got.masked_out);

    // A mask allowing everything equals no mask, exactly.
    let all = ModalityMask::allow_all(cfg.vocab_size);
    let masked = score_continuation(&params, &cfg, &prompt, &cont, Some(&all)).unwrap();
    assert_eq!(masked.logprob, got.logprob);

    // Masked-out target flags and returns minus infinity.
    let mut allow = vec![true; cfg.vocab_size];
    allow[cont[1] as usize] = false;
    let partial = ModalityMask::new(Modality::Text, 3, allow);
    let res = score_continuation(&params, &cfg, &prompt, &cont, Some(&partial)).unwrap();
    assert!(res.masked_out);
    assert_eq!(res.logprob, f64::NEG_INFINITY);
}

#[test]
fn checkpoint_round_trip_preserves_forward_bits() {
    use unitext::model::{load_checkpoint, save_checkpoint};
    let cfg = small_cfg();
    let params = ModelParams::<f64>::init(&cfg, 21);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &cfg, &params).unwrap();
    let (cfg2, p2) = load_checkpoint::<f64>(&path).unwrap();
    let ids: Vec<u32> = vec![0, 3, 9, 12];
    let a = forward_logprobs(&params, &cfg, &ids).unwrap();
    let b = forward_logprobs(&p2, &cfg2, &ids).unwrap();
    for (x, y) in a.iter().zip(b.iter()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}
