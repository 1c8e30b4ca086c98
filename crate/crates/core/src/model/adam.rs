//! Adam with decoupled weight decay, global-norm clipping, and linear warmup.

use super::params::ModelParams;
use super::{ModelConfig, Scalar, TrainConfig};

const ADAM_EPS: f64 = 1e-8;

pub struct AdamState<T> {
    m: ModelParams<T>,
    v: ModelParams<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(cfg: &ModelConfig) -> Self {
        Self {
            m: ModelParams::zeros(cfg),
            v: ModelParams::zeros(cfg),
            step: 0,
        }
    }

    /// One update. `grads` should already be clipped.
    pub fn step(
        &mut self,
        params: &mut ModelParams<T>,
        grads: &ModelParams<T>,
        tc: &TrainConfig,
        lr_now: f64,
    ) {
        self.step += 1;
        let b1 = T::from_f64(tc.adam_beta1);
        let b2 = T::from_f64(tc.adam_beta2);
        let one = T::one();
        let bc1 = T::from_f64(1.0 - tc.adam_beta1.powi(self.step as i32));
        let bc2 = T::from_f64(1.0 - tc.adam_beta2.powi(self.step as i32));
        let lr = T::from_f64(lr_now);
        let wd = T::from_f64(tc.weight_decay);
        let eps = T::from_f64(ADAM_EPS);

        let mut p_slices = params.slices_mut();
        let g_slices = grads.slices();
        let mut m_slices = self.m.slices_mut();
        let mut v_slices = self.v.slices_mut();
        for i in 0..p_slices.len() {
            let p = &mut p_slices[i];
            let g = g_slices[i];
            let m = &mut m_slices[i];
            let v = &mut v_slices[i];
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                // Decoupled weight decay.
                p[j] = p[j] - lr * (mhat / (vhat.sqrt() + eps) + wd * p[j]);
            }
        }
    }
}

/// Scale gradients so the global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm<T: Scalar>(grads: &mut ModelParams<T>, max_norm: f64) -> f64 {
    let mut norm2 = 0.0f64;
    for s in grads.slices() {
        for &g in s {
            let g = g.to_f64();
            norm2 += g * g;
        }
    }
    let norm = norm2.sqrt();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Linear warmup to `tc.lr`, then constant.
pub fn lr_at(tc: &TrainConfig, step: u64) -> f64 {
    if tc.warmup_steps > 0 && step < tc.warmup_steps {
        tc.lr * (step + 1) as f64 / tc.warmup_steps as f64
    } else {
        tc.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            n_heads: 1,
            embed_dim: 4,
            ffn_dim: 8,
            max_seq_len: 6,
            vocab_size: 5,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn clipping_scales_to_threshold() {
        let c = cfg();
        let mut grads = ModelParams::<f64>::zeros(&c);
        grads.embed[[0, 0]] = 6.0;
        grads.embed[[1, 0]] = 8.0;
        let norm = clip_global_norm(&mut grads, 1.0);
        assert!((norm - 10.0).abs() < 1e-12);
        let mut norm2 = 0.0;
        for s in grads.slices() {
            for &g in s {
                norm2 += g * g;
            }
        }
        assert!((norm2.sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clipping_leaves_small_gradients_alone() {
        let c = cfg();
        let mut grads = ModelParams::<f64>::zeros(&c);
        grads.embed[[0, 0]] = 0.25;
        let norm = clip_global_norm(&mut grads, 1.0);
        assert!((norm - 0.25).abs() < 1e-12);
        assert!((grads.embed[[0, 0]] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn warmup_is_linear_then_constant() {
        let tc = TrainConfig {
            lr: 1.0,
            warmup_steps: 4,
            ..TrainConfig::default()
        };
        assert!((lr_at(&tc, 0) - 0.25).abs() < 1e-12);
        assert!((lr_at(&tc, 3) - 1.0).abs() < 1e-12);
        assert!((lr_at(&tc, 100) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let c = cfg();
        let mut params = ModelParams::<f64>::init(&c, 1);
        let before = params.embed[[0, 0]];
        let mut grads = ModelParams::<f64>::zeros(&c);
        grads.embed[[0, 0]] = 1.0;
        let tc = TrainConfig {
            lr: 0.1,
            weight_decay: 0.0,
            warmup_steps: 0,
            ..TrainConfig::default()
        };
        let mut state = AdamState::new(&c);
        state.step(&mut params, &grads, &tc, tc.lr);
        assert!(params.embed[[0, 0]] < before);
    }
}
