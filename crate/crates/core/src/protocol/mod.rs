//! Coupling a trained model to the search engine: cumulative and
//! state-rebuilt inference, solve metrics, and a state-feature baseline.

pub mod mlp;

use alloc::boxed::Box;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::codec::{block_tokens, encode_prefix, mask_token, state_tokens, BlockSpan, CodecError, Layout, TraceFormat, Vocab};
use crate::domains::Instance;
use crate::model::{Model, ModelError, Sequence};
use crate::rng::{child_rng, derive, tag, Rng};
use crate::search::{
    run_search, Action, Agent, DomainAdapter, Engine, Move, OccurrenceDomain, Origin, Policy, Reactive, RunConfig, SearchError,
    SearchState, StepEvent, Termination, Val, Var, Verdict, Verifier,
};
use crate::threshold::{corrupt_oracle, BoundedProbe, CorruptionConfig, ThresholdError};

pub use mlp::{mlp_state_baseline, state_features, MlpAgent, MlpConfig, MlpError, StateMlp, FEATURES};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Protocol {
    /// Context is the prefix plus every block so far.
    Cumulative,
    /// Context is rebuilt each step from the prefix and the current state.
    #[default]
    StateRebuilt,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum PolicySource {
    #[default]
    Model,
    /// Branch variable drawn uniformly; value and backtrack from the model.
    RandomVariable,
    /// Occurrence-domain heuristic.
    Oracle,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum VerifierSource {
    #[default]
    Model,
    /// Backtrack exactly on exposed contradictions.
    Oracle,
    Corrupted(CorruptionConfig),
    BoundedProbe { conflicts: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProtocolConfig {
    pub protocol: Protocol,
    /// Budget in model-emitted tokens; state blocks are free.
    pub budget_tokens: u64,
    pub policy: PolicySource,
    pub verifier: VerifierSource,
    pub format: TraceFormat,
    pub seed: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::StateRebuilt,
            budget_tokens: 400,
            policy: PolicySource::Model,
            verifier: VerifierSource::Model,
            format: TraceFormat::Enriched,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
    #[error("invalid protocol configuration: {0}")]
    Config(&'static str),
    #[error("no instances to evaluate")]
    Empty,
}

/// Tokens the model reads and writes for one domain.
pub fn var_token(inst: &Instance, var: Var) -> String {
    match inst {
        Instance::Sat(_) => format!("v{var}"),
        Instance::Coloring(_) => format!("N{var}"),
        Instance::Peg(_) => format!("K{var}"),
    }
}

pub fn value_token(inst: &Instance, value: Val) -> String {
    match inst {
        Instance::Sat(_) => String::from(if value == crate::domains::sat::TRUE { "T" } else { "F" }),
        Instance::Coloring(_) => format!("C{}", value as u32 + 1),
        Instance::Peg(_) => format!("ALT{value}"),
    }
}

/// Infrastructure tokens between the variable and the value.
fn infix_tokens(inst: &Instance, state: &SearchState, var: Var) -> Vec<String> {
    match inst {
        Instance::Coloring(c) => alloc::vec![mask_token(state.domains[var as usize], c.colors)],
        _ => Vec::new(),
    }
}

/// Token ids and layout of the model's context, grown block by block.
#[derive(Clone, Debug)]
struct Context {
    ids: Vec<u32>,
    layout: Layout,
}

impl Context {
    fn prefix(inst: &Instance, vocab: &Vocab) -> Result<Self, CodecError> {
        let p = encode_prefix(inst);
        Ok(Self { ids: p.ids(vocab)?, layout: Layout { prefix: p.layout.prefix, blocks: Vec::new() } })
    }

    fn open_block(&mut self, state: &[u32]) {
        let start = self.ids.len();
        self.ids.extend_from_slice(state);
        let end = self.ids.len();
        self.layout.blocks.push(BlockSpan { start, state_end: end, end });
    }

    fn push(&mut self, id: u32) {
        self.ids.push(id);
        self.layout.blocks.last_mut().expect("open block").end += 1;
    }

    fn seq(&self) -> Sequence<'_> {
        Sequence { tokens: &self.ids, layout: &self.layout }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpisodeResult {
    pub termination: Termination,
    pub decisions: u64,
    pub backtracks: u64,
    pub tokens_used: u64,
    pub steps: u64,
    /// Branch actions chosen by the model.
    pub model_branches: u64,
    /// Model branches that repeat a (state, variable, value) already tried.
    pub repeats: u64,
    /// Model backtracks on states without an exposed contradiction.
    pub false_prunes: u64,
    /// Model branches on states with an exposed contradiction.
    pub missed_conflicts: u64,
    pub max_context: usize,
    pub mean_context: f64,
}

/// Search agent that consults a token model for the pieces the
/// configuration assigns to it.
pub struct ModelAgent<'a> {
    model: Option<&'a Model<f32>>,
    vocab: &'a Vocab,
    inst: &'a Instance,
    cfg: ProtocolConfig,
    verifier: Option<Box<dyn Verifier<Instance> + 'a>>,
    rng: Rng,
    prefix: Context,
    history: Context,
    seen: BTreeSet<(u64, Var, Val)>,
    pub stats: EpisodeResult,
    contexts: (usize, u64, u64),
    error: Option<ProtocolError>,
}

impl<'a> ModelAgent<'a> {
    pub fn new(
        model: Option<&'a Model<f32>>,
        vocab: &'a Vocab,
        inst: &'a Instance,
        cfg: ProtocolConfig,
    ) -> Result<Self, ProtocolError> {
        let needs_model = cfg.policy != PolicySource::Oracle || cfg.verifier == VerifierSource::Model;
        if needs_model && model.is_none() {
            return Err(ProtocolError::Config("this policy/verifier combination needs a model"));
        }
        if cfg.budget_tokens == 0 {
            return Err(ProtocolError::Config("token budget must be positive"));
        }
        let verifier: Option<Box<dyn Verifier<Instance>>> = match cfg.verifier {
            VerifierSource::Model => None,
            VerifierSource::Oracle => Some(Box::new(Reactive)),
            VerifierSource::Corrupted(c) => Some(Box::new(corrupt_oracle(c)?)),
            VerifierSource::BoundedProbe { conflicts } => Some(Box::new(BoundedProbe { conflicts })),
        };
        let prefix = Context::prefix(inst, vocab)?;
        Ok(Self {
            model,
            vocab,
            inst,
            cfg,
            verifier,
            rng: child_rng(cfg.seed, tag::EVAL, 0),
            history: prefix.clone(),
            prefix,
            seen: BTreeSet::new(),
            stats: EpisodeResult::default(),
            contexts: (0, 0, 0),
            error: None,
        })
    }

    fn id(&self, tok: &str) -> Result<u32, ProtocolError> {
        self.vocab.id(tok).ok_or_else(|| CodecError::UnknownToken(crate::codec::UnknownToken(tok.into())).into())
    }

    /// Context ending with the current state field.
    fn context(&self, state: &SearchState) -> Result<Context, ProtocolError> {
        let toks = state_tokens(self.inst, state, self.cfg.format)?;
        let ids = toks.iter().map(|t| self.id(t)).collect::<Result<Vec<_>, _>>()?;
        let mut ctx = match self.cfg.protocol {
            Protocol::Cumulative => self.history.clone(),
            Protocol::StateRebuilt => self.prefix.clone(),
        };
        ctx.open_block(&ids);
        Ok(ctx)
    }

    /// Greedy pick among `candidates` (token ids) after `ctx`, returning the
    /// index of the winner and the normalized distribution over candidates.
    fn pick(&mut self, ctx: &Context, candidates: &[u32]) -> Result<(usize, Vec<f32>), ProtocolError> {
        let model = self.model.expect("checked at construction");
        self.contexts.0 = self.contexts.0.max(ctx.ids.len());
        self.contexts.1 += ctx.ids.len() as u64;
        self.contexts.2 += 1;
        let dist = model.next_token_dist(&ctx.seq(), Some(candidates))?;
        let p: Vec<f32> = candidates.iter().map(|&c| dist[c as usize]).collect();
        let best = p.iter().enumerate().fold(0, |b, (i, &x)| if x > p[b] { i } else { b });
        Ok((best, p))
    }

    fn decide(&mut self, engine: &Engine<Instance>, state: &SearchState) -> Result<Move, ProtocolError> {
        let conflict = state.conflict.is_some();
        let branchable = self.inst.branchable(state);
        // Verifier first when it is symbolic.
        if let Some(v) = self.verifier.as_mut() {
            if v.query(engine, state) == Verdict::Backtrack {
                return Ok(Move { action: Action::Backtrack, origin: Origin::Verifier, tokens: 1 });
            }
            if conflict {
                return Ok(Move { action: Action::Backtrack, origin: Origin::Infrastructure, tokens: 1 });
            }
        }
        let model_verifies = self.verifier.is_none();
        if self.cfg.policy == PolicySource::Oracle {
            if model_verifies {
                let ctx = self.context(state)?;
                let mut cands = alloc::vec![self.id("CONFLICT")?];
                for &v in &branchable {
                    cands.push(self.id(&var_token(self.inst, v))?);
                }
                let (_, p) = self.pick(&ctx, &cands)?;
                if p[0] > 0.5 {
                    return Ok(self.backtrack(conflict));
                }
            }
            let (var, value) = OccurrenceDomain.choose(engine, state).ok_or(ProtocolError::Config("nothing to branch on"))?;
            return Ok(Move { action: Action::Branch { var, value }, origin: Origin::Policy, tokens: 2 });
        }
        let mut ctx = self.context(state)?;
        let mut cands = Vec::with_capacity(branchable.len() + 1);
        if model_verifies {
            cands.push(self.id("CONFLICT")?);
        }
        for &v in &branchable {
            cands.push(self.id(&var_token(self.inst, v))?);
        }
        let (best, _) = self.pick(&ctx, &cands)?;
        if model_verifies && best == 0 {
            return Ok(self.backtrack(conflict));
        }
        let var = match self.cfg.policy {
            PolicySource::RandomVariable => branchable[self.rng.gen_range(0..branchable.len())],
            _ => branchable[best - model_verifies as usize],
        };
        ctx.push(self.id(&var_token(self.inst, var))?);
        for t in infix_tokens(self.inst, state, var) {
            ctx.push(self.id(&t)?);
        }
        let values: Vec<Val> = state.domains[var as usize].iter().collect();
        let vcands = values.iter().map(|&x| self.id(&value_token(self.inst, x))).collect::<Result<Vec<_>, _>>()?;
        let (vbest, _) = self.pick(&ctx, &vcands)?;
        let value = values[vbest];
        self.stats.model_branches += 1;
        self.stats.missed_conflicts += conflict as u64;
        let key = crate::threshold::state_id(state);
        if !self.seen.insert((key, var, value)) {
            self.stats.repeats += 1;
        }
        Ok(Move { action: Action::Branch { var, value }, origin: Origin::Policy, tokens: 2 })
    }

    fn backtrack(&mut self, conflict: bool) -> Move {
        self.stats.false_prunes += !conflict as u64;
        Move { action: Action::Backtrack, origin: Origin::Verifier, tokens: 1 }
    }
}

impl<'a> Agent<Instance> for ModelAgent<'a> {
    fn act(&mut self, engine: &Engine<Instance>, state: &SearchState) -> Option<Move> {
        match self.decide(engine, state) {
            Ok(m) => Some(m),
            Err(e) => {
                self.error = Some(e);
                None
            }
        }
    }

    fn observe(&mut self, event: &StepEvent) {
        if self.cfg.protocol != Protocol::Cumulative || self.error.is_some() {
            return;
        }
        let appended = block_tokens(self.inst, event, self.cfg.format).map_err(ProtocolError::from).and_then(|b| {
            let ids = b.tokens.iter().map(|t| self.id(t)).collect::<Result<Vec<_>, _>>()?;
            Ok((ids, b.state_len))
        });
        match appended {
            Ok((ids, state_len)) => {
                let start = self.history.ids.len();
                self.history.ids.extend_from_slice(&ids);
                self.history.layout.blocks.push(BlockSpan {
                    start,
                    state_end: start + state_len,
                    end: start + ids.len(),
                });
            }
            Err(e) => self.error = Some(e),
        }
    }
}

/// One search episode with the configured sources.
pub fn run_episode(
    model: Option<&Model<f32>>,
    vocab: &Vocab,
    inst: &Instance,
    cfg: &ProtocolConfig,
) -> Result<EpisodeResult, ProtocolError> {
    let mut agent = ModelAgent::new(model, vocab, inst, *cfg)?;
    let rc = RunConfig {
        budget_tokens: cfg.budget_tokens,
        record_events: cfg.protocol == Protocol::Cumulative,
        known_satisfiable: Some(true),
        ..RunConfig::default()
    };
    let run = run_search(inst, &mut agent, &rc)?;
    if let Some(e) = agent.error.take() {
        return Err(e);
    }
    let mut r = agent.stats;
    r.termination = run.termination;
    r.decisions = run.decisions;
    r.backtracks = run.backtracks;
    r.tokens_used = run.tokens_used;
    r.steps = run.steps;
    r.max_context = agent.contexts.0;
    r.mean_context = agent.contexts.1 as f64 / agent.contexts.2.max(1) as f64;
    Ok(r)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolveMetrics {
    pub instances: usize,
    pub solve_rate: f64,
    pub timeout_rate: f64,
    pub false_unsat_rate: f64,
    pub exhausted_rate: f64,
    pub mean_decisions: f64,
    pub mean_backtracks: f64,
    pub repeat_rate: f64,
    pub false_prunes: u64,
    pub missed_conflicts: u64,
}

impl SolveMetrics {
    pub fn from_episodes(eps: &[EpisodeResult]) -> Self {
        let n = eps.len().max(1) as f64;
        let rate = |t: Termination| eps.iter().filter(|e| e.termination == t).count() as f64 / n;
        let branches: u64 = eps.iter().map(|e| e.model_branches).sum();
        let repeats: u64 = eps.iter().map(|e| e.repeats).sum();
        Self {
            instances: eps.len(),
            solve_rate: rate(Termination::Solved),
            timeout_rate: rate(Termination::Timeout),
            false_unsat_rate: rate(Termination::FalseUnsat),
            exhausted_rate: rate(Termination::Exhausted),
            mean_decisions: eps.iter().map(|e| e.decisions as f64).sum::<f64>() / n,
            mean_backtracks: eps.iter().map(|e| e.backtracks as f64).sum::<f64>() / n,
            repeat_rate: if branches == 0 { 0.0 } else { repeats as f64 / branches as f64 },
            false_prunes: eps.iter().map(|e| e.false_prunes).sum(),
            missed_conflicts: eps.iter().map(|e| e.missed_conflicts).sum(),
        }
    }
}

/// Episodes over every instance; instance `i` gets its own seed stream.
pub fn evaluate(
    model: Option<&Model<f32>>,
    vocab: &Vocab,
    instances: &[Instance],
    cfg: &ProtocolConfig,
) -> Result<(SolveMetrics, Vec<EpisodeResult>), ProtocolError> {
    if instances.is_empty() {
        return Err(ProtocolError::Empty);
    }
    let eps = instances
        .iter()
        .enumerate()
        .map(|(i, inst)| run_episode(model, vocab, inst, &ProtocolConfig { seed: derive(cfg.seed, tag::EVAL, i as u64), ..*cfg }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((SolveMetrics::from_episodes(&eps), eps))
}

/// Trace of the reference solver (occurrence-domain policy, reactive
/// verification) on one instance.
pub fn reference_trace(inst: &Instance, format: TraceFormat) -> Result<(crate::search::RunResult, crate::codec::Encoded), ProtocolError> {
    let mut agent = crate::search::PolicyVerifier::new(OccurrenceDomain, Reactive);
    let run = run_search(inst, &mut agent, &RunConfig { budget_tokens: u64::MAX / 4, ..RunConfig::default() })?;
    let enc = crate::codec::encode_trace(inst, &run.events, format)?;
    Ok((run, enc))
}
