//! Symbolic branching policies.

use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng as _;

use super::adapter::DomainAdapter;
use super::engine::Engine;
use super::run::StepEvent;
use super::state::{SearchState, Val, ValueSet, Var};
use crate::rng::Rng;

pub trait Policy<D: DomainAdapter + ?Sized> {
    fn choose(&mut self, engine: &Engine<D>, state: &SearchState) -> Option<(Var, Val)>;
    fn observe(&mut self, _event: &StepEvent) {}
}

fn preferred_value<D: DomainAdapter + ?Sized>(adapter: &D, state: &SearchState, var: Var) -> Option<Val> {
    let dom = state.domains[var as usize];
    let p = adapter.hint(state, var).preferred;
    if dom.contains(p) {
        Some(p)
    } else {
        dom.first()
    }
}

/// Candidates ranked by smallest domain, then most occurrences in open
/// constraints, then lowest index.
pub fn ranked_candidates<D: DomainAdapter + ?Sized>(adapter: &D, state: &SearchState) -> Vec<(Var, u32)> {
    let mut c: Vec<(Var, usize, u32)> = adapter
        .branchable(state)
        .into_iter()
        .map(|v| (v, state.domains[v as usize].len(), adapter.hint(state, v).occurrences))
        .collect();
    c.sort_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)).then(a.0.cmp(&b.0)));
    c.into_iter().map(|(v, _, o)| (v, o)).collect()
}

/// Occurrence + domain heuristic with polarity/lowest-value choice.
#[derive(Clone, Copy, Debug, Default)]
pub struct OccurrenceDomain;

impl<D: DomainAdapter + ?Sized> Policy<D> for OccurrenceDomain {
    fn choose(&mut self, engine: &Engine<D>, state: &SearchState) -> Option<(Var, Val)> {
        let (var, _) = *ranked_candidates(engine.adapter, state).first()?;
        Some((var, preferred_value(engine.adapter, state, var)?))
    }
}

/// Activity-based choice among the smallest domains. Variables implicated in
/// a conflict are bumped; activities decay geometrically per conflict.
#[derive(Clone, Debug)]
pub struct Vsids {
    activity: Vec<f64>,
    increment: f64,
    decay: f64,
}

impl Vsids {
    pub fn new(num_vars: usize) -> Self {
        Self { activity: alloc::vec![0.0; num_vars], increment: 1.0, decay: 0.95 }
    }
}

impl<D: DomainAdapter + ?Sized> Policy<D> for Vsids {
    fn choose(&mut self, engine: &Engine<D>, state: &SearchState) -> Option<(Var, Val)> {
        let cands = engine.adapter.branchable(state);
        let min_dom = cands.iter().map(|&v| state.domains[v as usize].len()).min()?;
        let var = cands
            .into_iter()
            .filter(|&v| state.domains[v as usize].len() == min_dom)
            .fold(None::<Var>, |best, v| match best {
                Some(b) if self.activity[b as usize] >= self.activity[v as usize] => Some(b),
                _ => Some(v),
            })?;
        Some((var, preferred_value(engine.adapter, state, var)?))
    }

    fn observe(&mut self, event: &StepEvent) {
        if let Some(c) = &event.state.conflict {
            for &v in &c.vars {
                self.activity[v as usize] += self.increment;
            }
            self.increment /= self.decay;
            if self.increment > 1e100 {
                for a in &mut self.activity {
                    *a *= 1e-100;
                }
                self.increment *= 1e-100;
            }
        }
    }
}

/// Uniform variable and uniform value.
#[derive(Clone, Debug)]
pub struct RandomPolicy {
    rng: Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self { rng: crate::rng::rng(seed) }
    }
}

fn pick(rng: &mut Rng, dom: ValueSet) -> Option<Val> {
    let vals: Vec<Val> = dom.iter().collect();
    (!vals.is_empty()).then(|| vals[rng.gen_range(0..vals.len())])
}

impl<D: DomainAdapter + ?Sized> Policy<D> for RandomPolicy {
    fn choose(&mut self, engine: &Engine<D>, state: &SearchState) -> Option<(Var, Val)> {
        let cands = engine.adapter.branchable(state);
        if cands.is_empty() {
            return None;
        }
        let var = cands[self.rng.gen_range(0..cands.len())];
        Some((var, pick(&mut self.rng, state.domains[var as usize])?))
    }
}

/// Softmax sampling at a temperature over the occurrence scores of the top-k
/// ranked candidates; value from the polarity hint.
#[derive(Clone, Debug)]
pub struct TopKSampler {
    pub k: usize,
    pub temperature: f64,
    /// Probability of flipping to a uniformly random value in the domain.
    pub value_noise: f64,
    rng: Rng,
}

impl TopKSampler {
    pub fn new(k: usize, temperature: f64, seed: u64) -> Self {
        Self { k, temperature, value_noise: 0.0, rng: crate::rng::rng(seed) }
    }

    pub fn with_value_noise(mut self, p: f64) -> Self {
        self.value_noise = p;
        self
    }
}

impl<D: DomainAdapter + ?Sized> Policy<D> for TopKSampler {
    fn choose(&mut self, engine: &Engine<D>, state: &SearchState) -> Option<(Var, Val)> {
        let ranked = ranked_candidates(engine.adapter, state);
        let top = &ranked[..ranked.len().min(self.k.max(1))];
        let best = top.first()?.1 as f64;
        let weights: Vec<f64> = top.iter().map(|&(_, o)| Float::exp((o as f64 - best) / self.temperature)).collect();
        let total: f64 = weights.iter().sum();
        let mut u = self.rng.gen::<f64>() * total;
        let mut var = top[top.len() - 1].0;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                var = top[i].0;
                break;
            }
            u -= w;
        }
        let value = if self.value_noise > 0.0 && self.rng.gen::<f64>() < self.value_noise {
            pick(&mut self.rng, state.domains[var as usize])?
        } else {
            preferred_value(engine.adapter, state, var)?
        };
        Some((var, value))
    }
}

/// Fixed variable order; first value in `values` that is in the domain.
#[derive(Clone, Debug)]
pub struct StaticOrder {
    pub order: Vec<Var>,
    pub values: Vec<Val>,
}

impl<D: DomainAdapter + ?Sized> Policy<D> for StaticOrder {
    fn choose(&mut self, engine: &Engine<D>, state: &SearchState) -> Option<(Var, Val)> {
        let cands = engine.adapter.branchable(state);
        let var = self.order.iter().copied().find(|v| cands.contains(v)).or_else(|| cands.first().copied())?;
        let dom = state.domains[var as usize];
        let value = self.values.iter().copied().find(|&v| dom.contains(v)).or_else(|| dom.first())?;
        Some((var, value))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum HeuristicKind {
    OccurrenceDomain,
    Vsids,
    Random,
}

/// Boxed policy by name, for configuration-driven callers.
pub fn heuristic<D: DomainAdapter + ?Sized + 'static>(
    kind: HeuristicKind,
    num_vars: usize,
    seed: u64,
) -> alloc::boxed::Box<dyn Policy<D>> {
    match kind {
        HeuristicKind::OccurrenceDomain => alloc::boxed::Box::new(OccurrenceDomain),
        HeuristicKind::Vsids => alloc::boxed::Box::new(Vsids::new(num_vars)),
        HeuristicKind::Random => alloc::boxed::Box::new(RandomPolicy::new(seed)),
    }
}

impl<D: DomainAdapter + ?Sized, P: Policy<D> + ?Sized> Policy<D> for alloc::boxed::Box<P> {
    fn choose(&mut self, engine: &Engine<D>, state: &SearchState) -> Option<(Var, Val)> {
        (**self).choose(engine, state)
    }
    fn observe(&mut self, event: &StepEvent) {
        (**self).observe(event)
    }
}
