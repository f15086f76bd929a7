use alloc::vec::Vec;

use super::adapter::{DomainAdapter, Evidence};
use super::engine::{Action, Engine, Origin, Outcome, SearchError};
use super::state::{SearchState, Val, Var};

/// One decision block: the state the action was taken in, the action, and
/// what the infrastructure did with it.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepEvent {
    pub state: SearchState,
    pub action: Action,
    pub origin: Origin,
    pub evidence: Evidence,
    pub outcome: Outcome,
    pub backjump_to: Option<u32>,
    pub retried: Option<(Var, Val)>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Termination {
    Solved,
    /// Declared failure on an instance known to be satisfiable.
    FalseUnsat,
    Exhausted,
    #[default]
    Timeout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Move {
    pub action: Action,
    pub origin: Origin,
    /// Tokens the agent emitted for this action.
    pub tokens: u64,
}

/// Something that picks the next action in a state with at least one
/// branchable variable and at least one untried alternative.
pub trait Agent<D: DomainAdapter + ?Sized> {
    /// `None` means the agent gave up (treated as a timeout).
    fn act(&mut self, engine: &Engine<D>, state: &SearchState) -> Option<Move>;
    fn observe(&mut self, _event: &StepEvent) {}
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunConfig {
    pub budget_tokens: u64,
    pub max_steps: u64,
    pub chronological: bool,
    pub record_events: bool,
    pub known_satisfiable: Option<bool>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { budget_tokens: 4096, max_steps: 1_000_000, chronological: false, record_events: true, known_satisfiable: None }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunResult {
    pub termination: Termination,
    pub decisions: u64,
    pub backtracks: u64,
    pub tokens_used: u64,
    pub steps: u64,
    pub events: Vec<StepEvent>,
    pub final_state: SearchState,
}

impl RunResult {
    pub fn solved(&self) -> bool {
        self.termination == Termination::Solved
    }
}

/// Drive the engine with an agent until the instance is solved, the search
/// space is exhausted, or the token budget runs out.
///
/// States with an exposed conflict and no untried alternative anywhere, and
/// states with nothing left to branch on, are handled here and never shown to
/// the agent.
pub fn run_search<D, A>(adapter: &D, agent: &mut A, config: &RunConfig) -> Result<RunResult, SearchError>
where
    D: DomainAdapter + ?Sized,
    A: Agent<D> + ?Sized,
{
    let engine = Engine::new(adapter).with_chronological(config.chronological);
    let mut state = engine.initial_state();
    let mut res = RunResult {
        termination: Termination::Timeout,
        decisions: 0,
        backtracks: 0,
        tokens_used: 0,
        steps: 0,
        events: Vec::new(),
        final_state: SearchState::empty(0),
    };
    let failed = if config.known_satisfiable == Some(true) { Termination::FalseUnsat } else { Termination::Exhausted };
    loop {
        if engine.is_goal(&state) {
            res.termination = Termination::Solved;
            break;
        }
        if res.steps >= config.max_steps {
            res.termination = Termination::Timeout;
            break;
        }
        let forced_backtrack =
            (state.conflict.is_some() && engine.backjump_target(&state).is_none()) || adapter.branchable(&state).is_empty();
        let mv = if forced_backtrack {
            Move { action: Action::Backtrack, origin: Origin::Infrastructure, tokens: 0 }
        } else {
            match agent.act(&engine, &state) {
                Some(mv) => mv,
                None => {
                    res.termination = Termination::Timeout;
                    break;
                }
            }
        };
        if res.tokens_used + mv.tokens > config.budget_tokens {
            res.termination = Termination::Timeout;
            break;
        }
        res.tokens_used += mv.tokens;
        let before = config.record_events.then(|| state.clone());
        let evidence = if config.record_events { adapter.evidence(&state) } else { Evidence::None };
        let step = engine.step(&mut state, mv.action, mv.origin)?;
        res.steps += 1;
        match mv.action {
            Action::Branch { .. } => res.decisions += 1,
            Action::Backtrack => {
                res.backtracks += 1;
                if step.retried.is_some() {
                    res.decisions += 1;
                }
            }
        }
        let event = StepEvent {
            state: before.unwrap_or_else(|| SearchState::empty(0)),
            action: mv.action,
            origin: mv.origin,
            evidence,
            outcome: step.outcome,
            backjump_to: step.backjump_to,
            retried: step.retried,
        };
        agent.observe(&event);
        if config.record_events {
            res.events.push(event);
        }
        match step.outcome {
            Outcome::Solved => {
                res.termination = Termination::Solved;
                break;
            }
            Outcome::Failed => {
                res.termination = failed;
                break;
            }
            _ => {}
        }
    }
    res.final_state = state;
    Ok(res)
}
