//! Parameter container with a canonical tensor order used by the optimizer,
//! checkpoints, and the gradient checker.

use super::{ModelConfig, Scalar};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct NormParams<T> {
    pub gain: Array1<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> NormParams<T> {
    fn ones(d: usize) -> Self {
        Self {
            gain: Array1::from_elem(d, T::one()),
            bias: Array1::zeros(d),
        }
    }

    fn zeros(d: usize) -> Self {
        Self {
            gain: Array1::zeros(d),
            bias: Array1::zeros(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub attn_norm: NormParams<T>,
    pub wq: Array2<T>,
    pub bq: Array1<T>,
    pub wk: Array2<T>,
    pub bk: Array1<T>,
    pub wv: Array2<T>,
    pub bv: Array1<T>,
    pub wo: Array2<T>,
    pub bo: Array1<T>,
    pub ffn_norm: NormParams<T>,
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array2<T>,
    pub b2: Array1<T>,
}

impl<T: Scalar> LayerParams<T> {
    fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.embed_dim;
        let f = cfg.ffn_dim;
        Self {
            attn_norm: NormParams::ones(d),
            wq: randn2(rng, d, d),
            bq: Array1::zeros(d),
            wk: randn2(rng, d, d),
            bk: Array1::zeros(d),
            wv: randn2(rng, d, d),
            bv: Array1::zeros(d),
            wo: randn2(rng, d, d),
            bo: Array1::zeros(d),
            ffn_norm: NormParams::ones(d),
            w1: randn2(rng, d, f),
            b1: Array1::zeros(f),
            w2: randn2(rng, f, d),
            b2: Array1::zeros(d),
        }
    }

    fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.embed_dim;
        let f = cfg.ffn_dim;
        Self {
            attn_norm: NormParams::zeros(d),
            wq: Array2::zeros((d, d)),
            bq: Array1::zeros(d),
            wk: Array2::zeros((d, d)),
            bk: Array1::zeros(d),
            wv: Array2::zeros((d, d)),
            bv: Array1::zeros(d),
            wo: Array2::zeros((d, d)),
            bo: Array1::zeros(d),
            ffn_norm: NormParams::zeros(d),
            w1: Array2::zeros((d, f)),
            b1: Array1::zeros(f),
            w2: Array2::zeros((f, d)),
            b2: Array1::zeros(d),
        }
    }
}

/// All model parameters. With tied embeddings the output projection is the
/// embedding transpose by construction and `out_proj` stays `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub embed: Array2<T>,
    pub pos: Array2<T>,
    pub layers: Vec<LayerParams<T>>,
    pub final_norm: NormParams<T>,
    pub out_proj: Option<Array2<T>>,
}

fn randn2<T: Scalar>(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<T> {
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    Array2::from_shape_fn((r, c), |_| T::from_f64(normal.sample(rng)))
}

/// Borrowed view of one parameter tensor.
pub enum TensorRef<'a, T> {
    A1(&'a Array1<T>),
    A2(&'a Array2<T>),
}

impl<'a, T: Scalar> TensorRef<'a, T> {
    pub fn as_slice(&self) -> &[T] {
        match self {
            TensorRef::A1(a) => a.as_slice().expect("standard layout"),
            TensorRef::A2(a) => a.as_slice().expect("standard layout"),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        match self {
            TensorRef::A1(a) => a.shape().to_vec(),
            TensorRef::A2(a) => a.shape().to_vec(),
        }
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed = randn2(&mut rng, cfg.vocab_size, cfg.embed_dim);
        let pos = randn2(&mut rng, cfg.max_seq_len, cfg.embed_dim);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerParams::init(cfg, &mut rng))
            .collect();
        let final_norm = NormParams::ones(cfg.embed_dim);
        let out_proj = if cfg.tie_embeddings {
            None
        } else {
            Some(randn2(&mut rng, cfg.vocab_size, cfg.embed_dim))
        };
        Self {
            embed,
            pos,
            layers,
            final_norm,
            out_proj,
        }
    }

    /// Zero-valued parameters in the same shape, i.e. a gradient holder.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            embed: Array2::zeros((cfg.vocab_size, cfg.embed_dim)),
            pos: Array2::zeros((cfg.max_seq_len, cfg.embed_dim)),
            layers: (0..cfg.n_layers).map(|_| LayerParams::zeros(cfg)).collect(),
            final_norm: NormParams::zeros(cfg.embed_dim),
            out_proj: if cfg.tie_embeddings {
                None
            } else {
                Some(Array2::zeros((cfg.vocab_size, cfg.embed_dim)))
            },
        }
    }

    /// Contiguous views of every tensor, in canonical order.
    pub fn slices(&self) -> Vec<&[T]> {
        self.tensors().into_iter().map(|(_, t)| {
            match t {
                TensorRef::A1(a) => a.as_slice().expect("standard layout"),
                TensorRef::A2(a) => a.as_slice().expect("standard layout"),
            }
        }).collect()
    }

    /// Mutable contiguous views of every tensor, in canonical order.
    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        out.push(self.embed.as_slice_mut().expect("standard layout"));
        out.push(self.pos.as_slice_mut().expect("standard layout"));
        for layer in &mut self.layers {
            out.push(layer.attn_norm.gain.as_slice_mut().unwrap());
            out.push(layer.attn_norm.bias.as_slice_mut().unwrap());
            out.push(layer.wq.as_slice_mut().unwrap());
            out.push(layer.bq.as_slice_mut().unwrap());
            out.push(layer.wk.as_slice_mut().unwrap());
            out.push(layer.bk.as_slice_mut().unwrap());
            out.push(layer.wv.as_slice_mut().unwrap());
            out.push(layer.bv.as_slice_mut().unwrap());
            out.push(layer.wo.as_slice_mut().unwrap());
            out.push(layer.bo.as_slice_mut().unwrap());
            out.push(layer.ffn_norm.gain.as_slice_mut().unwrap());
            out.push(layer.ffn_norm.bias.as_slice_mut().unwrap());
            out.push(layer.w1.as_slice_mut().unwrap());
            out.push(layer.b1.as_slice_mut().unwrap());
            out.push(layer.w2.as_slice_mut().unwrap());
            out.push(layer.b2.as_slice_mut().unwrap());
        }
        out.push(self.final_norm.gain.as_slice_mut().unwrap());
        out.push(self.final_norm.bias.as_slice_mut().unwrap());
        if let Some(op) = &mut self.out_proj {
            out.push(op.as_slice_mut().unwrap());
        }
        out
    }

    /// Named tensors in canonical order, for checkpoints and diagnostics.
    pub fn tensors(&self) -> Vec<(String, TensorRef<'_, T>)> {
        let mut out: Vec<(String, TensorRef<'_, T>)> = Vec::new();
        out.push(("embed".into(), TensorRef::A2(&self.embed)));
        out.push(("pos".into(), TensorRef::A2(&self.pos)));
        for (i, layer) in self.layers.iter().enumerate() {
            let n = |field: &str| format!("layer{i}.{field}");
            out.push((n("attn_norm.gain"), TensorRef::A1(&layer.attn_norm.gain)));
            out.push((n("attn_norm.bias"), TensorRef::A1(&layer.attn_norm.bias)));
            out.push((n("wq"), TensorRef::A2(&layer.wq)));
            out.push((n("bq"), TensorRef::A1(&layer.bq)));
            out.push((n("wk"), TensorRef::A2(&layer.wk)));
            out.push((n("bk"), TensorRef::A1(&layer.bk)));
            out.push((n("wv"), TensorRef::A2(&layer.wv)));
            out.push((n("bv"), TensorRef::A1(&layer.bv)));
            out.push((n("wo"), TensorRef::A2(&layer.wo)));
            out.push((n("bo"), TensorRef::A1(&layer.bo)));
            out.push((n("ffn_norm.gain"), TensorRef::A1(&layer.ffn_norm.gain)));
            out.push((n("ffn_norm.bias"), TensorRef::A1(&layer.ffn_norm.bias)));
            out.push((n("w1"), TensorRef::A2(&layer.w1)));
            out.push((n("b1"), TensorRef::A1(&layer.b1)));
            out.push((n("w2"), TensorRef::A2(&layer.w2)));
            out.push((n("b2"), TensorRef::A1(&layer.b2)));
        }
        out.push(("final_norm.gain".into(), TensorRef::A1(&self.final_norm.gain)));
        out.push(("final_norm.bias".into(), TensorRef::A1(&self.final_norm.bias)));
        if let Some(op) = &self.out_proj {
            out.push(("out_proj".into(), TensorRef::A2(op)));
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Self) {
        let mut mine = self.slices_mut();
        let theirs = other.slices();
        assert_eq!(mine.len(), theirs.len());
        for (a, b) in mine.iter_mut().zip(theirs) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    /// Elementwise `self *= factor`.
    pub fn scale(&mut self, factor: f64) {
        let f = T::from_f64(factor);
        for s in self.slices_mut() {
            for x in s {
                *x *= f;
            }
        }
    }
}
