//! Decoder-only transformer with a multiple-choice head, highlight
//! embeddings, and hand-derived gradients for the joint
//! classification + language-modeling objective.

mod checkpoint;
mod forward;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, ParamEntry, CHECKPOINT_MAGIC, FORMAT_VERSION};
pub use forward::{highlight_slots, LossOutput, Trace};

/// Output layer over per-option scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Exactly one correct option; cross-entropy over the option scores.
    #[default]
    Softmax,
    /// Any number of correct options; independent binary decisions.
    Sigmoid,
}

impl std::fmt::Display for Head {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Head::Softmax => "softmax",
            Head::Sigmoid => "sigmoid",
        })
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    pub init_std: f64,
    /// When false the highlight vectors are held at zero and never trained.
    #[serde(default = "default_true")]
    pub highlight: bool,
}

impl ModelConfig {
    /// Laptop-scale defaults.
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            layers: 4,
            heads: 4,
            d_model: 128,
            d_ff: 512,
            max_len: 256,
            vocab_size,
            dropout: 0.1,
            init_std: 0.02,
            highlight: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("model {name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if self.d_ff < self.d_model {
            return Err(Error::invalid("d_ff must be at least d_model"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::invalid("init_std must be positive"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    /// Fused query/key/value projection, `d_model x 3 d_model`.
    pub w_qkv: Array2<f64>,
    pub b_qkv: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w_fc: Array2<f64>,
    pub b_fc: Array1<f64>,
    pub w_proj: Array2<f64>,
    pub b_proj: Array1<f64>,
}

/// All trainable tensors. Gradients and optimizer moments reuse this type.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    /// Added to document tokens that are highlighted.
    pub hl_pos: Array1<f64>,
    /// Added to all other document tokens.
    pub hl_neg: Array1<f64>,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
    /// Bias-free classification vector over the END-token activation.
    pub clf_w: Array1<f64>,
}

impl LayerParams {
    fn zeros(cfg: &ModelConfig) -> Self {
        let (d, f) = (cfg.d_model, cfg.d_ff);
        LayerParams {
            ln1_g: Array1::zeros(d),
            ln1_b: Array1::zeros(d),
            w_qkv: Array2::zeros((d, 3 * d)),
            b_qkv: Array1::zeros(3 * d),
            w_out: Array2::zeros((d, d)),
            b_out: Array1::zeros(d),
            ln2_g: Array1::zeros(d),
            ln2_b: Array1::zeros(d),
            w_fc: Array2::zeros((d, f)),
            b_fc: Array1::zeros(f),
            w_proj: Array2::zeros((f, d)),
            b_proj: Array1::zeros(d),
        }
    }
}

macro_rules! layer_fields {
    ($m:ident) => {
        $m!(ln1_g, ln1_b, w_qkv, b_qkv, w_out, b_out, ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj)
    };
}

impl Params {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        Params {
            tok_emb: Array2::zeros((cfg.vocab_size, d)),
            pos_emb: Array2::zeros((cfg.max_len, d)),
            hl_pos: Array1::zeros(d),
            hl_neg: Array1::zeros(d),
            layers: (0..cfg.layers).map(|_| LayerParams::zeros(cfg)).collect(),
            lnf_g: Array1::zeros(d),
            lnf_b: Array1::zeros(d),
            clf_w: Array1::zeros(d),
        }
    }

    /// Normal(0, init_std) weights, unit layer-norm gains, zero biases.
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let normal = Normal::new(0.0, cfg.init_std).map_err(|e| Error::invalid(e.to_string()))?;
        let mut p = Params::zeros(cfg);
        let mut fill = |xs: &mut [f64]| xs.iter_mut().for_each(|x| *x = normal.sample(rng));
        fill(slice_mut(&mut p.tok_emb));
        fill(slice_mut(&mut p.pos_emb));
        fill(slice_mut(&mut p.hl_pos));
        fill(slice_mut(&mut p.hl_neg));
        for l in &mut p.layers {
            fill(slice_mut(&mut l.w_qkv));
            fill(slice_mut(&mut l.w_out));
            fill(slice_mut(&mut l.w_fc));
            fill(slice_mut(&mut l.w_proj));
            l.ln1_g.fill(1.0);
            l.ln2_g.fill(1.0);
        }
        p.lnf_g.fill(1.0);
        fill(slice_mut(&mut p.clf_w));
        if !cfg.highlight {
            p.hl_pos.fill(0.0);
            p.hl_neg.fill(0.0);
        }
        Ok(p)
    }

    /// `(name, shape, values)` for every tensor in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = vec![
            ("tok_emb".into(), self.tok_emb.shape().to_vec(), slice(&self.tok_emb)),
            ("pos_emb".into(), self.pos_emb.shape().to_vec(), slice(&self.pos_emb)),
            ("hl_pos".into(), self.hl_pos.shape().to_vec(), slice(&self.hl_pos)),
            ("hl_neg".into(), self.hl_neg.shape().to_vec(), slice(&self.hl_neg)),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            macro_rules! push {
                ($($f:ident),+) => {
                    $(out.push((format!("layers.{i}.{}", stringify!($f)), l.$f.shape().to_vec(), slice(&l.$f)));)+
                };
            }
            layer_fields!(push);
        }
        out.push(("lnf_g".into(), self.lnf_g.shape().to_vec(), slice(&self.lnf_g)));
        out.push(("lnf_b".into(), self.lnf_b.shape().to_vec(), slice(&self.lnf_b)));
        out.push(("clf_w".into(), self.clf_w.shape().to_vec(), slice(&self.clf_w)));
        out
    }

    /// Mutable views in the same order as [`Params::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            slice_mut(&mut self.tok_emb),
            slice_mut(&mut self.pos_emb),
            slice_mut(&mut self.hl_pos),
            slice_mut(&mut self.hl_neg),
        ];
        for l in &mut self.layers {
            macro_rules! push {
                ($($f:ident),+) => {
                    $(out.push(slice_mut(&mut l.$f));)+
                };
            }
            layer_fields!(push);
        }
        out.push(slice_mut(&mut self.lnf_g));
        out.push(slice_mut(&mut self.lnf_b));
        out.push(slice_mut(&mut self.clf_w));
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b.2).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.2.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.2.iter().all(|x| x.is_finite()))
    }

    /// Rounds every value to the nearest `f32`, the checkpoint precision.
    pub fn round_to_f32(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x = *x as f32 as f64);
        }
    }
}

fn slice<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("parameters are stored contiguously")
}

fn slice_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("parameters are stored contiguously")
}

/// Configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
}

impl Model {
    /// Freshly initialized model. Parameters are rounded to `f32` so that a
    /// checkpoint of the untrained model reloads exactly.
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let mut params = Params::init(&config, rng)?;
        params.round_to_f32();
        Ok(Model { config, params })
    }
}
