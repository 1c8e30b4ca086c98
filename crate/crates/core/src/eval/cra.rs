//! Context retrieval accuracy over an m-by-m conditional score matrix.

use super::EvalError;
use crate::model::{score_continuation, ModelConfig, ModelParams, Scalar};
use crate::vocab::ModalityMask;
use ndarray::Array2;
use rayon::prelude::*;

/// Entry `(i, j)` holds `log P(continuation_i | prompt_j)`.
#[derive(Debug, Clone)]
pub struct ScoreMatrix {
    pub values: Array2<f64>,
    pub ids: Vec<String>,
    /// Cells flagged minus-infinity by the modality mask.
    pub flagged: usize,
}

/// Score all m*m prompt/continuation pairs. The parallel path fans cells out
/// across workers and reduces in index order, so it matches the sequential
/// result bit for bit.
pub fn score_matrix<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    prompts: &[Vec<u32>],
    conts: &[Vec<u32>],
    ids: &[String],
    mask: Option<&ModalityMask>,
    parallel: bool,
) -> Result<ScoreMatrix, EvalError> {
    if prompts.len() != conts.len() {
        return Err(EvalError::LengthMismatch(prompts.len(), conts.len()));
    }
    let m = prompts.len();
    let cell = |idx: usize| -> Result<(f64, bool), EvalError> {
        let (i, j) = (idx / m, idx % m);
        let s = score_continuation(params, cfg, &prompts[j], &conts[i], mask)?;
        Ok((s.logprob, s.masked_out))
    };
    let cells: Vec<(f64, bool)> = if parallel {
        (0..m * m)
            .into_par_iter()
            .map(cell)
            .collect::<Result<Vec<_>, _>>()?
    } else {
        (0..m * m).map(cell).collect::<Result<Vec<_>, _>>()?
    };
    let mut values = Array2::zeros((m, m));
    let mut flagged = 0;
    for (idx, (v, f)) in cells.into_iter().enumerate() {
        values[[idx / m, idx % m]] = v;
        flagged += f as usize;
    }
    Ok(ScoreMatrix {
        values,
        ids: ids.to_vec(),
        flagged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CraOutcome {
    pub accuracy: f64,
    /// Rows whose argmax tied; ties resolve toward the smallest index.
    pub ties: usize,
    /// Rows that were entirely minus-infinity, counted incorrect.
    pub dead_rows: usize,
}

/// Fraction of rows whose matched prompt attains the maximum score.
pub fn cra_from_matrix(matrix: &ScoreMatrix) -> CraOutcome {
    let m = matrix.values.nrows();
    let mut hits = 0usize;
    let mut ties = 0usize;
    let mut dead_rows = 0usize;
    for i in 0..m {
        let row = matrix.values.row(i);
        if row.iter().all(|v| v.is_infinite() && v.is_sign_negative()) {
            dead_rows += 1;
            continue;
        }
        let mut best = 0usize;
        let mut tied = false;
        for j in 1..m {
            if row[j] > row[best] {
                best = j;
                tied = false;
            } else if row[j] == row[best] {
                tied = true;
            }
        }
        if tied {
            ties += 1;
        }
        if best == i {
            hits += 1;
        }
    }
    CraOutcome {
        accuracy: hits as f64 / m as f64,
        ties,
        dead_rows,
    }
}

/// Check the pointwise-mutual-information identity: subtracting the row's
/// unconditional score from every entry never changes the argmax.
pub fn pmi_consistent(matrix: &ScoreMatrix, unconditional: &[f64]) -> bool {
    let m = matrix.values.nrows();
    assert_eq!(unconditional.len(), m);
    for i in 0..m {
        let row = matrix.values.row(i);
        let argmax = |vals: &[f64]| -> usize {
            let mut best = 0;
            for (j, &v) in vals.iter().enumerate() {
                if v > vals[best] {
                    best = j;
                }
            }
            best
        };
        let plain: Vec<f64> = row.to_vec();
        let shifted: Vec<f64> = row.iter().map(|v| v - unconditional[i]).collect();
        if argmax(&plain) != argmax(&shifted) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn toy_setup() -> (ModelParams<f64>, ModelConfig, Vec<Vec<u32>>, Vec<Vec<u32>>, Vec<String>) {
        let cfg = ModelConfig {
            n_layers: 1,
            n_heads: 2,
            embed_dim: 12,
            ffn_dim: 16,
            dropout_prob: 0.0,
            max_seq_len: 24,
            vocab_size: 13,
            ..ModelConfig::default()
        };
        let params = ModelParams::<f64>::init(&cfg, 31);
        let prompts: Vec<Vec<u32>> = (0..5).map(|i| vec![1, 2 + i as u32, 3]).collect();
        let conts: Vec<Vec<u32>> = (0..5).map(|i| vec![4, (5 + i) as u32]).collect();
        let ids = (0..5).map(|i| format!("u{i}")).collect();
        (params, cfg, prompts, conts, ids)
    }

    #[test]
    fn single_pair_is_always_retrieved() {
        let (params, cfg, prompts, conts, ids) = toy_setup();
        let m =
            score_matrix(&params, &cfg, &prompts[..1], &conts[..1], &ids[..1], None, false)
                .unwrap();
        assert_eq!(cra_from_matrix(&m).accuracy, 1.0);
    }

    #[test]
    fn parallel_equals_sequential_bit_for_bit() {
        let (params, cfg, prompts, conts, ids) = toy_setup();
        let a = score_matrix(&params, &cfg, &prompts, &conts, &ids, None, false).unwrap();
        let b = score_matrix(&params, &cfg, &prompts, &conts, &ids, None, true).unwrap();
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn cra_is_invariant_under_joint_permutation() {
        let (params, cfg, prompts, conts, ids) = toy_setup();
        let base = cra_from_matrix(
            &score_matrix(&params, &cfg, &prompts, &conts, &ids, None, false).unwrap(),
        );
        let perm = [3usize, 0, 4, 1, 2];
        let p2: Vec<Vec<u32>> = perm.iter().map(|&i| prompts[i].clone()).collect();
        let c2: Vec<Vec<u32>> = perm.iter().map(|&i| conts[i].clone()).collect();
        let i2: Vec<String> = perm.iter().map(|&i| ids[i].clone()).collect();
        let permuted =
            cra_from_matrix(&score_matrix(&params, &cfg, &p2, &c2, &i2, None, false).unwrap());
        assert_eq!(base.accuracy, permuted.accuracy);
    }

    #[test]
    fn pmi_identity_holds_with_row_shifts() {
        let (params, cfg, prompts, conts, ids) = toy_setup();
        let m = score_matrix(&params, &cfg, &prompts, &conts, &ids, None, false).unwrap();
        let unconditional = vec![-3.5, 0.0, 7.25, -100.0, 42.0];
        assert!(pmi_consistent(&m, &unconditional));
    }

    #[test]
    fn dead_rows_count_incorrect() {
        let values = ndarray::array![
            [f64::NEG_INFINITY, f64::NEG_INFINITY],
            [0.5, -1.0],
        ];
        let m = ScoreMatrix {
            values,
            ids: vec!["a".into(), "b".into()],
            flagged: 2,
        };
        let out = cra_from_matrix(&m);
        assert_eq!(out.dead_rows, 1);
        assert_eq!(out.accuracy, 0.0);
    }

    #[test]
    fn mismatched_lengths_error() {
        let (params, cfg, prompts, conts, ids) = toy_setup();
        assert!(matches!(
            score_matrix(&params, &cfg, &prompts[..3], &conts, &ids, None, false),
            Err(EvalError::LengthMismatch(3, 5))
        ));
    }
}
