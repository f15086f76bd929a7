//! A small decoder-only transformer with a pluggable attention mask and
//! position scheme, learnable slot registers, and hand-written gradients.

mod forward;
pub mod kernels;
mod train;

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand_distr::{Distribution, Normal};

use crate::mask::{MaskKind, PositionScheme};

pub use forward::{Forward, Sequence};
pub use train::{accuracy, clip_grad, train, AdamW, Example, Schedule, TrainConfig, TrainReport};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn: usize,
    pub vocab: usize,
    pub slots: usize,
    pub mask: MaskKind,
    pub positions: PositionScheme,
    pub dropout: f64,
    pub max_pos: usize,
}

impl ModelConfig {
    /// Two layers, width 64, four heads, eight slots.
    pub fn desk(vocab: usize) -> Self {
        Self {
            layers: 2,
            dim: 64,
            heads: 4,
            ffn: 256,
            vocab,
            slots: 8,
            mask: MaskKind::SsaSelective,
            positions: PositionScheme::BlockRelative,
            dropout: 0.0,
            max_pos: 2048,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(ModelError::Config("dim must be a positive multiple of heads"));
        }
        if self.vocab == 0 || self.ffn == 0 {
            return Err(ModelError::Config("vocab and ffn must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config("dropout must lie in [0, 1)"));
        }
        if self.max_pos <= self.slots {
            return Err(ModelError::Config("max_pos must exceed the slot count"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Config(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("position {pos} exceeds the table of {max}")]
    PositionOverflow { pos: usize, max: usize },
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Where each tensor lives in the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Offsets {
    pub tok: usize,
    pub pos: usize,
    pub slot: usize,
    pub layers: Vec<LayerOffsets>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub out_w: usize,
    pub out_b: usize,
    pub total: usize,
    /// (name, offset, shape) for every tensor, in storage order.
    pub table: Vec<(String, usize, Vec<usize>)>,
}

/// How a tensor is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Normal,
    Residual,
    Zero,
    One,
}

impl Offsets {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut at = 0usize;
        let mut table = Vec::new();
        let mut take = |name: String, shape: &[usize]| {
            let off = at;
            at += shape.iter().product::<usize>();
            table.push((name, off, shape.to_vec()));
            off
        };
        let (d, f, v) = (cfg.dim, cfg.ffn, cfg.vocab);
        let tok = take("tok_emb".into(), &[v, d]);
        let pos = take("pos_emb".into(), &[cfg.max_pos, d]);
        let slot = take("slot_emb".into(), &[cfg.slots, d]);
        let mut layers = Vec::new();
        for l in 0..cfg.layers {
            let n = |s: &str| alloc::format!("layer{l}.{s}");
            layers.push(LayerOffsets {
                ln1_g: take(n("ln1.g"), &[d]),
                ln1_b: take(n("ln1.b"), &[d]),
                wq: take(n("attn.wq"), &[d, d]),
                wk: take(n("attn.wk"), &[d, d]),
                wv: take(n("attn.wv"), &[d, d]),
                wo: take(n("attn.wo"), &[d, d]),
                bo: take(n("attn.bo"), &[d]),
                ln2_g: take(n("ln2.g"), &[d]),
                ln2_b: take(n("ln2.b"), &[d]),
                w1: take(n("ffn.w1"), &[d, f]),
                b1: take(n("ffn.b1"), &[f]),
                w2: take(n("ffn.w2"), &[f, d]),
                b2: take(n("ffn.b2"), &[d]),
            });
        }
        let lnf_g = take("lnf.g".into(), &[d]);
        let lnf_b = take("lnf.b".into(), &[d]);
        let out_w = take("out.w".into(), &[d, v]);
        let out_b = take("out.b".into(), &[v]);
        Self { tok, pos, slot, layers, lnf_g, lnf_b, out_w, out_b, total: at, table }
    }

    /// Matrices that receive weight decay.
    pub fn decayed(&self) -> Vec<(usize, usize)> {
        self.table
            .iter()
            .filter(|(name, _, shape)| shape.len() == 2 && !name.ends_with("_emb"))
            .map(|(_, off, shape)| (*off, shape.iter().product()))
            .collect()
    }
}

fn init_kind(name: &str) -> Init {
    if name.ends_with(".g") {
        Init::One
    } else if name.ends_with(".b") || name.ends_with(".bo") || name.ends_with(".b1") || name.ends_with(".b2") {
        Init::Zero
    } else if name.ends_with("attn.wo") || name.ends_with("ffn.w2") {
        Init::Residual
    } else {
        Init::Normal
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub off: Offsets,
    pub params: Vec<T>,
}

impl<T: Float> Model<T> {
    /// Normal(0, 0.02) weights, residual projections scaled by
    /// 1/sqrt(2·layers), unit gains and zero biases.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let off = Offsets::new(&cfg);
        let mut params = alloc::vec![T::zero(); off.total];
        let mut rng = crate::rng::child_rng(seed, crate::rng::tag::INIT, 0);
        let normal = Normal::new(0.0f64, 0.02).expect("valid std");
        let resid = 1.0 / libm_sqrt(2.0 * cfg.layers.max(1) as f64);
        for (name, o, shape) in &off.table {
            let len: usize = shape.iter().product();
            let slice = &mut params[*o..*o + len];
            match init_kind(name) {
                Init::One => slice.iter_mut().for_each(|p| *p = T::one()),
                Init::Zero => {}
                Init::Normal => slice.iter_mut().for_each(|p| *p = T::from(normal.sample(&mut rng)).unwrap()),
                Init::Residual => slice.iter_mut().for_each(|p| *p = T::from(normal.sample(&mut rng) * resid).unwrap()),
            }
        }
        Ok(Self { cfg, off, params })
    }

    pub fn from_params(cfg: ModelConfig, params: Vec<T>) -> Result<Self, ModelError> {
        cfg.validate()?;
        let off = Offsets::new(&cfg);
        if params.len() != off.total {
            return Err(ModelError::ShapeMismatch(alloc::format!("expected {} parameters, got {}", off.total, params.len())));
        }
        Ok(Self { cfg, off, params })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn cast<U: Float>(&self) -> Model<U> {
        Model { cfg: self.cfg, off: self.off.clone(), params: self.params.iter().map(|&p| U::from(p).unwrap()).collect() }
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.off
            .table
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, o, shape)| &self.params[*o..*o + shape.iter().product::<usize>()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let (o, len) = self.off.table.iter().find(|(n, _, _)| n == name).map(|(_, o, s)| (*o, s.iter().product::<usize>()))?;
        Some(&mut self.params[o..o + len])
    }
}

fn libm_sqrt(x: f64) -> f64 {
    Float::sqrt(x)
}
