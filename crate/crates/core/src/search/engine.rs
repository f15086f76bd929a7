use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use super::adapter::DomainAdapter;
use super::state::{Conflict, Frame, SearchState, TrailEntry, Val, ValueSet, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Action {
    Branch { var: Var, value: Val },
    Backtrack,
}

impl Action {
    pub fn is_backtrack(self) -> bool {
        matches!(self, Action::Backtrack)
    }
}

/// Who issued an action. Policy backtracks must be justified by a conflict or
/// by the absence of any branchable variable; verifier and infrastructure
/// backtracks may prune a conflict-free state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Origin {
    Policy,
    Verifier,
    Infrastructure,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Outcome {
    Ok,
    /// Propagation exposed a contradiction; `backjump_to` is the level the
    /// search returns to before retrying, `None` when nothing is left.
    Conflict { backjump_to: Option<u32> },
    Solved,
    Failed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepResult {
    pub outcome: Outcome,
    /// For backtracks: the level returned to and the value retried there.
    pub backjump_to: Option<u32>,
    pub retried: Option<(Var, Val)>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SearchError {
    #[error("inadmissible action: {0}")]
    InadmissibleAction(&'static str),
    #[error("token budget exceeded")]
    BudgetExceeded,
    #[error("invalid instance: {0}")]
    InvalidInstance(&'static str),
}

pub struct Engine<'a, D: DomainAdapter + ?Sized> {
    pub adapter: &'a D,
    /// Ignore conflict levels and always return to the deepest open level.
    pub chronological: bool,
}

impl<'a, D: DomainAdapter + ?Sized> Clone for Engine<'a, D> {
    fn clone(&self) -> Self {
        Self { adapter: self.adapter, chronological: self.chronological }
    }
}

impl<'a, D: DomainAdapter + ?Sized> Engine<'a, D> {
    pub fn new(adapter: &'a D) -> Self {
        Self { adapter, chronological: false }
    }

    pub fn with_chronological(mut self, flag: bool) -> Self {
        self.chronological = flag;
        self
    }

    /// Level-0 state after initial propagation.
    pub fn initial_state(&self) -> SearchState {
        let mut s = SearchState::empty(self.adapter.num_vars());
        self.settle(&mut s);
        s
    }

    /// Build a state from an explicit trail without propagating it.
    /// Meant for fixtures that start from a hand-written partial assignment.
    pub fn state_from_trail(&self, trail: Vec<TrailEntry>) -> SearchState {
        let mut s = SearchState::empty(self.adapter.num_vars());
        for e in &trail {
            s.assignment[e.var as usize] = Some(e.value);
            if !e.forced {
                let level = e.level as usize;
                while s.frames.len() < level {
                    s.frames.push(Frame { var: e.var, tried: ValueSet::EMPTY, blame: Vec::new() });
                }
                s.frames[level - 1] = Frame { var: e.var, tried: ValueSet::single(e.value), blame: Vec::new() };
            }
            s.level = s.level.max(e.level);
        }
        s.trail = trail;
        s.domains = self.domains_of(&s.assignment);
        s
    }

    pub fn is_goal(&self, state: &SearchState) -> bool {
        state.conflict.is_none() && self.adapter.is_goal(&state.assignment)
    }

    fn domains_of(&self, assignment: &[Option<Val>]) -> Vec<ValueSet> {
        (0..assignment.len() as Var).map(|v| self.adapter.domain(assignment, v)).collect()
    }

    /// Propagate at the current level and refresh domains and conflict.
    fn settle(&self, s: &mut SearchState) {
        let prop = self.adapter.propagate(&mut s.assignment);
        for f in prop.forced {
            s.trail.push(TrailEntry { var: f.var, value: f.value, level: s.level, forced: true, reason: Some(f.reason) });
        }
        s.domains = self.domains_of(&s.assignment);
        s.conflict = prop.conflict.map(|(id, vars)| {
            let levels = self.conflict_levels(s, &vars);
            Conflict { id, vars, levels }
        });
    }

    /// Decision levels reached from `vars` by following forcing reasons.
    pub fn conflict_levels(&self, s: &SearchState, vars: &[Var]) -> Vec<u32> {
        let mut pos = alloc::vec![usize::MAX; s.num_vars()];
        for (i, e) in s.trail.iter().enumerate() {
            pos[e.var as usize] = i;
        }
        let mut seen = alloc::vec![false; s.num_vars()];
        let mut stack: Vec<Var> = vars.to_vec();
        let mut levels = BTreeSet::new();
        while let Some(v) = stack.pop() {
            if core::mem::replace(&mut seen[v as usize], true) {
                continue;
            }
            let i = pos[v as usize];
            if i == usize::MAX {
                continue;
            }
            let e = &s.trail[i];
            match (e.forced, e.reason) {
                (true, Some(r)) => stack.extend(self.adapter.reason_vars(r, v)),
                _ if e.level > 0 => {
                    levels.insert(e.level);
                }
                _ => {}
            }
        }
        levels.into_iter().collect()
    }

    /// Whether the decision variable at `level` still has a value that was
    /// not attempted, judged against its domain just below that level.
    pub fn has_untried(&self, s: &SearchState, level: u32) -> bool {
        self.untried(s, level).is_some()
    }

    fn untried(&self, s: &SearchState, level: u32) -> Option<Val> {
        let frame = s.frames.get(level as usize - 1)?;
        let below = s.assignment_below(level);
        self.adapter.domain(&below, frame.var).minus(frame.tried).first()
    }

    /// Level to retry after a backtrack, with the lower levels the failure is
    /// attributed to.
    fn target_with_blame(&self, s: &SearchState) -> Option<(u32, Vec<u32>)> {
        if let (Some(c), false) = (&s.conflict, self.chronological) {
            let mut relevant: BTreeSet<u32> = c.levels.iter().copied().collect();
            for l in (1..=s.level).rev() {
                if !relevant.contains(&l) {
                    continue;
                }
                if self.has_untried(s, l) {
                    return Some((l, relevant.range(..l).copied().collect()));
                }
                // Level l is exhausted: its failure rests on what was blamed
                // there before and on whatever pruned its variable's domain.
                let frame = &s.frames[l as usize - 1];
                relevant.extend(frame.blame.iter().copied());
                let pruned_by = self.adapter.domain_reasons(&s.assignment_below(l), frame.var);
                relevant.extend(self.conflict_levels(s, &pruned_by));
                relevant.remove(&l);
            }
        }
        (1..=s.level).rev().find(|&l| self.has_untried(s, l)).map(|l| (l, (1..l).collect()))
    }

    /// Deepest level at or below the current one that still has an untried
    /// value and whose decision the conflict depends on; chronological when
    /// no conflict is exposed, none qualifies, or the engine is set to
    /// chronological mode. `None` means the search space is exhausted.
    pub fn backjump_target(&self, s: &SearchState) -> Option<u32> {
        self.target_with_blame(s).map(|(l, _)| l)
    }

    pub fn check(&self, s: &SearchState, action: Action, origin: Origin) -> Result<(), SearchError> {
        match action {
            Action::Branch { var, value } => {
                if var as usize >= s.num_vars() {
                    return Err(SearchError::InadmissibleAction("unknown variable"));
                }
                if s.assignment[var as usize].is_some() {
                    return Err(SearchError::InadmissibleAction("variable already assigned"));
                }
                if !s.domains[var as usize].contains(value) {
                    return Err(SearchError::InadmissibleAction("value outside current domain"));
                }
                if !self.adapter.branchable(s).contains(&var) {
                    return Err(SearchError::InadmissibleAction("variable not branchable"));
                }
                Ok(())
            }
            Action::Backtrack => {
                if origin == Origin::Policy && s.conflict.is_none() && !self.adapter.branchable(s).is_empty() {
                    return Err(SearchError::InadmissibleAction("backtrack without conflict while branches remain"));
                }
                Ok(())
            }
        }
    }

    fn outcome_after_assignment(&self, s: &SearchState) -> Outcome {
        if s.conflict.is_some() {
            Outcome::Conflict { backjump_to: self.backjump_target(s).map(|l| l - 1) }
        } else if self.adapter.is_goal(&s.assignment) {
            Outcome::Solved
        } else {
            Outcome::Ok
        }
    }

    /// Apply one action. On a backtrack the engine returns to the target
    /// level, records the failed value as tried, and immediately retries the
    /// next untried value there.
    pub fn step(&self, s: &mut SearchState, action: Action, origin: Origin) -> Result<StepResult, SearchError> {
        self.check(s, action, origin)?;
        match action {
            Action::Branch { var, value } => {
                s.level += 1;
                s.frames.push(Frame { var, tried: ValueSet::single(value), blame: Vec::new() });
                s.assignment[var as usize] = Some(value);
                s.trail.push(TrailEntry { var, value, level: s.level, forced: false, reason: None });
                self.settle(s);
                Ok(StepResult { outcome: self.outcome_after_assignment(s), backjump_to: None, retried: None })
            }
            Action::Backtrack => {
                let Some((target, blame)) = self.target_with_blame(s) else {
                    return Ok(StepResult { outcome: Outcome::Failed, backjump_to: None, retried: None });
                };
                {
                    let frame = &mut s.frames[target as usize - 1];
                    let merged: BTreeSet<u32> = frame.blame.iter().copied().chain(blame).collect();
                    frame.blame = merged.into_iter().collect();
                }
                while s.trail.last().is_some_and(|e| e.level >= target) {
                    let e = s.trail.pop().unwrap();
                    s.assignment[e.var as usize] = None;
                }
                s.frames.truncate(target as usize);
                s.level = target - 1;
                s.conflict = None;
                let var = s.frames[target as usize - 1].var;
                let value = self
                    .adapter
                    .domain(&s.assignment, var)
                    .minus(s.frames[target as usize - 1].tried)
                    .first()
                    .ok_or(SearchError::InadmissibleAction("backjump target has no untried value"))?;
                s.frames[target as usize - 1].tried.insert(value);
                s.level = target;
                s.assignment[var as usize] = Some(value);
                s.trail.push(TrailEntry { var, value, level: target, forced: false, reason: None });
                self.settle(s);
                Ok(StepResult {
                    outcome: self.outcome_after_assignment(s),
                    backjump_to: Some(target - 1),
                    retried: Some((var, value)),
                })
            }
        }
    }
}
