use super::adapter::DomainAdapter;
use super::engine::{Action, Engine, Origin};
use super::heuristics::Policy;
use super::run::{Agent, Move, StepEvent};
use super::state::SearchState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Verdict {
    Continue,
    Backtrack,
}

/// Decides, once per post-propagation state, whether to abandon it.
pub trait Verifier<D: DomainAdapter + ?Sized> {
    fn query(&mut self, engine: &Engine<D>, state: &SearchState) -> Verdict;
}

/// Backtrack exactly when propagation has exposed a contradiction.
#[derive(Clone, Copy, Debug, Default)]
pub struct Reactive;

impl<D: DomainAdapter + ?Sized> Verifier<D> for Reactive {
    fn query(&mut self, _engine: &Engine<D>, state: &SearchState) -> Verdict {
        if state.conflict.is_some() {
            Verdict::Backtrack
        } else {
            Verdict::Continue
        }
    }
}

/// Symbolic agent: ask the verifier first, branch with the policy otherwise.
/// A branch costs two tokens (variable, value) and a backtrack one.
pub struct PolicyVerifier<P, V> {
    pub policy: P,
    pub verifier: V,
}

impl<P, V> PolicyVerifier<P, V> {
    pub fn new(policy: P, verifier: V) -> Self {
        Self { policy, verifier }
    }
}

impl<D, P, V> Agent<D> for PolicyVerifier<P, V>
where
    D: DomainAdapter + ?Sized,
    P: Policy<D>,
    V: Verifier<D>,
{
    fn act(&mut self, engine: &Engine<D>, state: &SearchState) -> Option<Move> {
        if self.verifier.query(engine, state) == Verdict::Backtrack {
            return Some(Move { action: Action::Backtrack, origin: Origin::Verifier, tokens: 1 });
        }
        if state.conflict.is_some() {
            // A verifier that lets a conflict through still cannot branch past
            // it; the search falls back to reactive backtracking.
            return Some(Move { action: Action::Backtrack, origin: Origin::Infrastructure, tokens: 1 });
        }
        let (var, value) = self.policy.choose(engine, state)?;
        Some(Move { action: Action::Branch { var, value }, origin: Origin::Policy, tokens: 2 })
    }

    fn observe(&mut self, event: &StepEvent) {
        self.policy.observe(event);
    }
}

impl<D: DomainAdapter + ?Sized, V: Verifier<D> + ?Sized> Verifier<D> for alloc::boxed::Box<V> {
    fn query(&mut self, engine: &Engine<D>, state: &SearchState) -> Verdict {
        (**self).query(engine, state)
    }
}

impl<D: DomainAdapter + ?Sized, V: Verifier<D> + ?Sized> Verifier<D> for &mut V {
    fn query(&mut self, engine: &Engine<D>, state: &SearchState) -> Verdict {
        (**self).query(engine, state)
    }
}
