use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;

use super::{Model, ModelError, Sequence};
use crate::codec::{CodecError, Encoded, Layout, LossMask, Vocab};
use crate::rng::{child_rng, tag};

/// One training sequence: ids, layout, and the token indices scored by the loss.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Example {
    pub tokens: Vec<u32>,
    pub layout: Layout,
    pub targets: Vec<usize>,
}

impl Example {
    pub fn from_encoded(enc: &Encoded, vocab: &Vocab, loss: LossMask) -> Result<Self, CodecError> {
        let tokens = enc.ids(vocab)?;
        let targets = enc.loss_mask(loss).iter().enumerate().filter(|&(i, &b)| b && i > 0).map(|(i, _)| i).collect();
        Ok(Self { tokens, layout: enc.layout.clone(), targets })
    }

    pub fn seq(&self) -> Sequence<'_> {
        Sequence { tokens: &self.tokens, layout: &self.layout }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub clip: f64,
    pub loss_mask: LossMask,
    #[cfg_attr(feature = "serde", serde(default))]
    pub schedule: Schedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            weight_decay: 0.01,
            epochs: 10,
            batch_size: 8,
            seed: 0,
            clip: 1.0,
            loss_mask: LossMask::ActionOnly,
            schedule: Schedule::Constant,
        }
    }
}

/// Learning-rate schedule over the whole run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Schedule {
    #[default]
    Constant,
    /// Linear decay to zero at the last step.
    Linear,
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainReport {
    /// Mean per-target loss of each epoch.
    pub epoch_loss: Vec<f64>,
    pub steps: usize,
}

/// Adam with decoupled weight decay on weight matrices.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
    decay: Vec<bool>,
}

impl<T: Float> AdamW<T> {
    pub fn new(model: &Model<T>, lr: f64, weight_decay: f64) -> Self {
        let mut decay = vec![false; model.num_params()];
        for (o, len) in model.off.decayed() {
            decay[o..o + len].iter_mut().for_each(|d| *d = true);
        }
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![T::zero(); model.num_params()],
            v: vec![T::zero(); model.num_params()],
            t: 0,
            decay,
        }
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        self.t += 1;
        let c = |x: f64| T::from(x).unwrap();
        let (b1, b2) = (c(self.beta1), c(self.beta2));
        let bc1 = c(1.0 - Float::powi(self.beta1, self.t));
        let bc2 = c(1.0 - Float::powi(self.beta2, self.t));
        let (lr, eps, wd) = (c(self.lr), c(self.eps), c(self.lr * self.weight_decay));
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            if self.decay[i] {
                params[i] = params[i] - wd * params[i];
            }
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] = params[i] - lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Scale `grad` so its global L2 norm is at most `max`; returns the pre-clip norm.
pub fn clip_grad<T: Float>(grad: &mut [T], max: f64) -> f64 {
    let norm = Float::sqrt(grad.iter().fold(0.0f64, |s, g| {
        let g = g.to_f64().unwrap();
        s + g * g
    }));
    if norm > max && norm > 0.0 {
        let k = T::from(max / norm).unwrap();
        grad.iter_mut().for_each(|g| *g = *g * k);
    }
    norm
}

/// Next-token training over shuffled mini-batches. `progress` sees each
/// finished epoch and its mean loss.
pub fn train<T: Float>(
    model: &mut Model<T>,
    tc: &TrainConfig,
    data: &[Example],
    progress: &mut dyn FnMut(usize, f64),
) -> Result<TrainReport, ModelError> {
    let mut report = TrainReport::default();
    if tc.epochs == 0 || data.is_empty() {
        return Ok(report);
    }
    let mut opt = AdamW::new(model, tc.lr, tc.weight_decay);
    let mut grad = vec![T::zero(); model.num_params()];
    let batch = tc.batch_size.max(1);
    let total = tc.epochs * data.len().div_ceil(batch);
    for epoch in 0..tc.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut child_rng(tc.seed, tag::SHUFFLE, epoch as u64));
        let (mut sum, mut count) = (0.0f64, 0usize);
        for chunk in order.chunks(batch) {
            let targets: usize = chunk.iter().map(|&i| data[i].targets.len()).sum();
            if targets == 0 {
                continue;
            }
            grad.iter_mut().for_each(|g| *g = T::zero());
            let w = T::one() / T::from(targets).unwrap();
            let mut batch_loss = 0.0;
            for &i in chunk {
                let ex = &data[i];
                let mut drop = child_rng(tc.seed, tag::DROPOUT, (report.steps * batch + i) as u64);
                let l = model.loss_grad(&ex.seq(), &ex.targets, w, &mut grad, Some(&mut drop))?;
                batch_loss += l.to_f64().unwrap();
            }
            if !batch_loss.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch, step: report.steps });
            }
            clip_grad(&mut grad, tc.clip);
            if tc.schedule == Schedule::Linear {
                opt.lr = tc.lr * (1.0 - report.steps as f64 / total as f64);
            }
            opt.step(&mut model.params, &grad);
            report.steps += 1;
            sum += batch_loss;
            count += targets;
        }
        let mean = sum / count.max(1) as f64;
        report.epoch_loss.push(mean);
        progress(epoch, mean);
    }
    Ok(report)
}

/// Fraction of target tokens whose argmax prediction is correct.
pub fn accuracy<T: Float>(model: &Model<T>, data: &[Example]) -> Result<f64, ModelError> {
    let (mut hit, mut total) = (0usize, 0usize);
    for ex in data {
        let at: Vec<usize> = ex.targets.iter().map(|&t| t - 1).collect();
        let logits = model.forward(&ex.seq(), &at)?;
        for (row, &t) in logits.iter().zip(&ex.targets) {
            let best = row.iter().enumerate().fold(0, |b, (i, &x)| if x > row[b] { i } else { b });
            hit += (best == ex.tokens[t] as usize) as usize;
            total += 1;
        }
    }
    Ok(if total == 0 { 1.0 } else { hit as f64 / total as f64 })
}
