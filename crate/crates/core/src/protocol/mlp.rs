//! Per-variable state-feature MLP: reads only the canonical state and
//! produces branch and backtrack decisions.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand_distr::{Distribution, Normal};

use crate::domains::sat::{Cnf, TRUE};
use crate::domains::Instance;
use crate::rng::{child_rng, tag};
use crate::search::{Action, Agent, DomainAdapter, Engine, Move, Origin, SearchState, Val, Var};

/// assigned, sign, forced, open positive occurrences, open negative
/// occurrences, domain size.
pub const FEATURES: usize = 6;
/// Per-variable features plus conflict flag and assigned fraction.
const INPUTS: usize = FEATURES + 2;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum MlpError {
    #[error("no training pairs")]
    InsufficientData,
    #[error("state features are defined for CNF instances only")]
    Unsupported,
}

pub fn state_features(cnf: &Cnf, state: &SearchState) -> Vec<[f64; FEATURES]> {
    (0..cnf.num_vars as Var)
        .map(|v| {
            let a = state.assignment[v as usize];
            let (p, n) = cnf.open_occurrences(&state.assignment, v);
            [
                a.is_some() as u8 as f64,
                match a {
                    None => 0.0,
                    Some(x) if x == TRUE => 1.0,
                    Some(_) => -1.0,
                },
                state.entry(v).is_some_and(|e| e.forced) as u8 as f64,
                p as f64,
                n as f64,
                state.domains[v as usize].len() as f64,
            ]
        })
        .collect()
}

fn inputs(cnf: &Cnf, state: &SearchState) -> Vec<[f64; INPUTS]> {
    let feats = state_features(cnf, state);
    let frac = state.num_assigned() as f64 / cnf.num_vars.max(1) as f64;
    let conflict = state.conflict.is_some() as u8 as f64;
    feats
        .iter()
        .map(|f| {
            let mut x = [0.0; INPUTS];
            x[..3].copy_from_slice(&f[..3]);
            x[3] = f[3] / 4.0;
            x[4] = f[4] / 4.0;
            x[5] = f[5] / 2.0;
            x[6] = conflict;
            x[7] = frac;
            x
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MlpConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { hidden: 32, epochs: 400, lr: 1e-2, seed: 0 }
    }
}

/// Shared per-variable encoder `h = relu(W x + b)` with three heads: a
/// branch score and a value logit per variable, and a backtrack logit from
/// the mean-pooled encoding. Heads start at zero, so an untrained predictor
/// is uniform over its choices.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StateMlp {
    pub hidden: usize,
    /// `[w1 (hidden x INPUTS), b1, ws, bs, wu, bu, wb, bb]`, flat.
    pub params: Vec<f64>,
}

struct Parts {
    w1: usize,
    b1: usize,
    ws: usize,
    bs: usize,
    wu: usize,
    bu: usize,
    wb: usize,
    bb: usize,
    total: usize,
}

impl StateMlp {
    pub fn new(hidden: usize, seed: u64) -> Self {
        let p = Self::parts(hidden);
        let mut params = vec![0.0; p.total];
        let normal = Normal::new(0.0, (2.0 / INPUTS as f64).sqrt()).expect("finite std");
        let mut rng = child_rng(seed, tag::INIT, 1);
        for w in &mut params[p.w1..p.b1] {
            *w = normal.sample(&mut rng);
        }
        Self { hidden, params }
    }

    fn parts(h: usize) -> Parts {
        let w1 = 0;
        let b1 = w1 + h * INPUTS;
        let ws = b1 + h;
        let bs = ws + h;
        let wu = bs + 1;
        let bu = wu + h;
        let wb = bu + 1;
        let bb = wb + h;
        Parts { w1, b1, ws, bs, wu, bu, wb, bb, total: bb + 1 }
    }

    fn encode(&self, x: &[[f64; INPUTS]]) -> Vec<Vec<f64>> {
        let (h, p) = (self.hidden, Self::parts(self.hidden));
        x.iter()
            .map(|xi| {
                (0..h)
                    .map(|j| {
                        let row = &self.params[p.w1 + j * INPUTS..p.w1 + (j + 1) * INPUTS];
                        let z = self.params[p.b1 + j] + row.iter().zip(xi).map(|(w, x)| w * x).sum::<f64>();
                        z.max(0.0)
                    })
                    .collect()
            })
            .collect()
    }

    /// Backtrack logit, per-variable branch scores, per-variable value logits.
    fn heads(&self, hs: &[Vec<f64>]) -> (f64, Vec<f64>, Vec<f64>) {
        let p = Self::parts(self.hidden);
        let dot = |o: usize, h: &[f64]| self.params[o..o + self.hidden].iter().zip(h).map(|(w, x)| w * x).sum::<f64>();
        let pooled = mean_rows(hs, self.hidden);
        let bt = self.params[p.bb] + dot(p.wb, &pooled);
        let s = hs.iter().map(|h| self.params[p.bs] + dot(p.ws, h)).collect();
        let u = hs.iter().map(|h| self.params[p.bu] + dot(p.wu, h)).collect();
        (bt, s, u)
    }

    /// Probability of backtracking followed by the probability of each
    /// candidate variable, and the probability of TRUE for each candidate.
    pub fn decision(&self, cnf: &Cnf, state: &SearchState, candidates: &[Var]) -> (Vec<f64>, Vec<f64>) {
        let hs = self.encode(&inputs(cnf, state));
        let (bt, s, u) = self.heads(&hs);
        let mut logits = vec![bt];
        logits.extend(candidates.iter().map(|&v| s[v as usize]));
        (softmax(&logits), candidates.iter().map(|&v| sigmoid(u[v as usize])).collect())
    }

    /// Summed loss and its gradient for one (state, action) pair.
    fn loss_grad(&self, cnf: &Cnf, state: &SearchState, cands: &[Var], action: Action, grad: &mut [f64]) -> f64 {
        let (h, p) = (self.hidden, Self::parts(self.hidden));
        let x = inputs(cnf, state);
        let hs = self.encode(&x);
        let (bt, s, u) = self.heads(&hs);
        let mut logits = vec![bt];
        logits.extend(cands.iter().map(|&v| s[v as usize]));
        let probs = softmax(&logits);
        let (target, value) = match action {
            Action::Backtrack => (0, None),
            Action::Branch { var, value } => (1 + cands.iter().position(|&c| c == var).unwrap_or(0), Some((var, value))),
        };
        let mut loss = -probs[target].max(1e-300).ln();
        // d loss / d logits
        let mut dl: Vec<f64> = probs.clone();
        dl[target] -= 1.0;
        let n = hs.len();
        let mut dh = vec![vec![0.0; h]; n];
        let pooled = mean_rows(&hs, h);
        grad[p.bb] += dl[0];
        for j in 0..h {
            grad[p.wb + j] += dl[0] * pooled[j];
            for row in dh.iter_mut() {
                row[j] += dl[0] * self.params[p.wb + j] / n as f64;
            }
        }
        for (k, &v) in cands.iter().enumerate() {
            let d = dl[k + 1];
            grad[p.bs] += d;
            for j in 0..h {
                grad[p.ws + j] += d * hs[v as usize][j];
                dh[v as usize][j] += d * self.params[p.ws + j];
            }
        }
        if let Some((var, val)) = value {
            let y = (val == TRUE) as u8 as f64;
            let q = sigmoid(u[var as usize]);
            loss -= y * q.max(1e-300).ln() + (1.0 - y) * (1.0 - q).max(1e-300).ln();
            let d = q - y;
            grad[p.bu] += d;
            for j in 0..h {
                grad[p.wu + j] += d * hs[var as usize][j];
                dh[var as usize][j] += d * self.params[p.wu + j];
            }
        }
        for (i, xi) in x.iter().enumerate() {
            for j in 0..h {
                if hs[i][j] <= 0.0 {
                    continue;
                }
                let d = dh[i][j];
                grad[p.b1 + j] += d;
                for (k, xv) in xi.iter().enumerate() {
                    grad[p.w1 + j * INPUTS + k] += d * xv;
                }
            }
        }
        loss
    }

    /// Fraction of pairs whose argmax decision (and value, for branches)
    /// matches the recorded action.
    pub fn accuracy(&self, pairs: &[(Instance, SearchState, Action)]) -> Result<f64, MlpError> {
        let mut hit = 0usize;
        for (inst, state, action) in pairs {
            let Instance::Sat(cnf) = inst else { return Err(MlpError::Unsupported) };
            hit += (self.act_on(inst, cnf, state).0 == *action) as usize;
        }
        Ok(hit as f64 / pairs.len().max(1) as f64)
    }

    fn act_on(&self, inst: &Instance, cnf: &Cnf, state: &SearchState) -> (Action, f64) {
        let cands = inst.branchable(state);
        let (p, t) = self.decision(cnf, state, &cands);
        let best = p.iter().enumerate().fold(0, |b, (i, &x)| if x > p[b] { i } else { b });
        if best == 0 || cands.is_empty() {
            return (Action::Backtrack, p[0]);
        }
        let var = cands[best - 1];
        let value: Val = if t[best - 1] >= 0.5 { TRUE } else { 1 - TRUE };
        (Action::Branch { var, value }, p[0])
    }
}

fn mean_rows(hs: &[Vec<f64>], h: usize) -> Vec<f64> {
    let mut m = vec![0.0; h];
    for row in hs {
        for (a, b) in m.iter_mut().zip(row) {
            *a += b;
        }
    }
    let n = hs.len().max(1) as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Full-batch Adam on (state, action) pairs.
pub fn mlp_state_baseline(pairs: &[(Instance, SearchState, Action)], cfg: &MlpConfig) -> Result<StateMlp, MlpError> {
    if pairs.is_empty() {
        return Err(MlpError::InsufficientData);
    }
    let mut mlp = StateMlp::new(cfg.hidden, cfg.seed);
    let n = mlp.params.len();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    for t in 1..=cfg.epochs {
        let mut grad = vec![0.0; n];
        for (inst, state, action) in pairs {
            let Instance::Sat(cnf) = inst else { return Err(MlpError::Unsupported) };
            mlp.loss_grad(cnf, state, &inst.branchable(state), *action, &mut grad);
        }
        let scale = 1.0 / pairs.len() as f64;
        let (c1, c2) = (1.0 - b1.powi(t as i32), 1.0 - b2.powi(t as i32));
        for i in 0..n {
            let g = grad[i] * scale;
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            mlp.params[i] -= cfg.lr * (m[i] / c1) / (Float::sqrt(v[i] / c2) + eps);
        }
    }
    Ok(mlp)
}

/// The MLP as a search agent: backtrack when that is its top choice,
/// otherwise branch on its top variable.
pub struct MlpAgent<'a> {
    pub mlp: &'a StateMlp,
}

impl<'a> Agent<Instance> for MlpAgent<'a> {
    fn act(&mut self, engine: &Engine<Instance>, state: &SearchState) -> Option<Move> {
        let inst = engine.adapter;
        let Instance::Sat(cnf) = inst else { return None };
        let (action, _) = self.mlp.act_on(inst, cnf, state);
        let origin = if action.is_backtrack() { Origin::Verifier } else { Origin::Policy };
        Some(Move { action, origin, tokens: if action.is_backtrack() { 1 } else { 2 } })
    }
}
