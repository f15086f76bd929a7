//! Search state, the step/backjump engine, the agent loop, and symbolic
//! policies and verifiers.

mod adapter;
mod engine;
pub mod heuristics;
mod run;
mod state;
mod verifier;

pub use adapter::{ClauseVerdict, DomainAdapter, Evidence, Forced, LitVerdict, Propagation, Truth, VarHint};
pub use engine::{Action, Engine, Origin, Outcome, SearchError, StepResult};
pub use heuristics::{
    heuristic, ranked_candidates, HeuristicKind, OccurrenceDomain, Policy, RandomPolicy, StaticOrder, TopKSampler, Vsids,
};
pub use run::{run_search, Agent, Move, RunConfig, RunResult, StepEvent, Termination};
pub use state::{Conflict, Frame, SearchState, TrailEntry, Val, ValueSet, Var};
pub use verifier::{PolicyVerifier, Reactive, Verdict, Verifier};
