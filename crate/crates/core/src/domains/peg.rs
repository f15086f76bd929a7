//! Backtracking parse over a small ambiguous expression grammar:
//!
//! ```text
//! Expr   <- Term ('+' Expr / ε)
//! Term   <- Factor ('*' Term / ε)
//! Factor <- '(' Expr ')' / NUM / NUM NUM
//! ```
//!
//! Every choice point met during a leftmost derivation is a search variable
//! (in encounter order) whose value is the alternative taken. Only the next
//! pending choice point is branchable, so the engine behaves like a parser
//! with full backtracking over alternatives.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::search::{DomainAdapter, Evidence, Propagation, SearchState, Val, ValueSet, Var, VarHint};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PegTok {
    Num,
    Plus,
    Star,
    Open,
    Close,
}

impl PegTok {
    pub const ALL: [PegTok; 5] = [PegTok::Num, PegTok::Plus, PegTok::Star, PegTok::Open, PegTok::Close];

    pub fn text(self) -> &'static str {
        match self {
            PegTok::Num => "NUM",
            PegTok::Plus => "+",
            PegTok::Star => "*",
            PegTok::Open => "(",
            PegTok::Close => ")",
        }
    }

    pub fn from_text(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.text() == s)
    }
}

/// Grammar symbols as they appear on the parser stack.
pub mod sym {
    pub const EXPR: u8 = 0;
    pub const TERM: u8 = 1;
    pub const FACTOR: u8 = 2;
    pub const EXPR_TAIL: u8 = 3;
    pub const TERM_TAIL: u8 = 4;
    /// Terminals are `TOKEN + PegTok as u8`.
    pub const TOKEN: u8 = 8;

    pub fn name(s: u8) -> &'static str {
        match s {
            EXPR => "EXPR",
            TERM => "TERM",
            FACTOR => "FACTOR",
            EXPR_TAIL => "EXPR_TAIL",
            TERM_TAIL => "TERM_TAIL",
            _ => super::PegTok::ALL[(s - TOKEN) as usize].text(),
        }
    }
}

fn alternatives(kind: u8) -> usize {
    if kind == sym::FACTOR {
        3
    } else {
        2
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ParseStatus {
    Pending { choice: u32, kind: u8, cursor: u32, stack: Vec<u8> },
    Success,
    /// The derivation failed; `cursor` is where matching stopped.
    Failure { cursor: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PegTask {
    pub input: Vec<PegTok>,
}

impl PegTask {
    pub fn new(input: Vec<PegTok>) -> Self {
        Self { input }
    }

    pub fn parse_text(text: &str) -> Option<Self> {
        text.split_whitespace().map(PegTok::from_text).collect::<Option<Vec<_>>>().map(Self::new)
    }

    pub fn max_choices(&self) -> usize {
        4 * self.input.len() + 8
    }

    /// Run the derivation using `choices` in order until a choice is missing,
    /// the derivation fails, or the stack empties.
    pub fn simulate(&self, choices: &[Option<Val>]) -> ParseStatus {
        let mut stack: Vec<u8> = alloc::vec![sym::EXPR];
        let mut cursor = 0usize;
        let mut next_choice = 0usize;
        while let Some(top) = stack.pop() {
            match top {
                sym::EXPR => {
                    stack.push(sym::EXPR_TAIL);
                    stack.push(sym::TERM);
                }
                sym::TERM => {
                    stack.push(sym::TERM_TAIL);
                    stack.push(sym::FACTOR);
                }
                sym::FACTOR | sym::EXPR_TAIL | sym::TERM_TAIL => {
                    if next_choice >= choices.len() {
                        return ParseStatus::Failure { cursor: cursor as u32 };
                    }
                    let Some(alt) = choices[next_choice] else {
                        stack.push(top);
                        stack.reverse();
                        return ParseStatus::Pending { choice: next_choice as u32, kind: top, cursor: cursor as u32, stack };
                    };
                    next_choice += 1;
                    let t = |k: PegTok| sym::TOKEN + k as u8;
                    match (top, alt) {
                        (sym::FACTOR, 0) => stack.extend([t(PegTok::Close), sym::EXPR, t(PegTok::Open)]),
                        (sym::FACTOR, 1) => stack.push(t(PegTok::Num)),
                        (sym::FACTOR, 2) => stack.extend([t(PegTok::Num), t(PegTok::Num)]),
                        (sym::EXPR_TAIL, 0) => stack.extend([sym::EXPR, t(PegTok::Plus)]),
                        (sym::TERM_TAIL, 0) => stack.extend([sym::TERM, t(PegTok::Star)]),
                        (sym::EXPR_TAIL, 1) | (sym::TERM_TAIL, 1) => {}
                        _ => return ParseStatus::Failure { cursor: cursor as u32 },
                    }
                }
                terminal => {
                    let want = PegTok::ALL[(terminal - sym::TOKEN) as usize];
                    if self.input.get(cursor) == Some(&want) {
                        cursor += 1;
                    } else {
                        return ParseStatus::Failure { cursor: cursor as u32 };
                    }
                }
            }
        }
        if cursor == self.input.len() {
            ParseStatus::Success
        } else {
            ParseStatus::Failure { cursor: cursor as u32 }
        }
    }
}

impl DomainAdapter for PegTask {
    fn num_vars(&self) -> usize {
        self.max_choices()
    }

    fn domain(&self, assignment: &[Option<Val>], var: Var) -> ValueSet {
        if let Some(v) = assignment[var as usize] {
            return ValueSet::single(v);
        }
        match self.simulate(assignment) {
            ParseStatus::Pending { choice, kind, .. } if choice == var => ValueSet::full(alternatives(kind)),
            _ => ValueSet::full(3),
        }
    }

    fn propagate(&self, assignment: &mut [Option<Val>]) -> Propagation {
        let mut out = Propagation::default();
        if let ParseStatus::Failure { cursor } = self.simulate(assignment) {
            let vars = (0..assignment.len() as Var).filter(|&v| assignment[v as usize].is_some()).collect();
            out.conflict = Some((cursor, vars));
        }
        out
    }

    fn reason_vars(&self, _reason: u32, _var: Var) -> Vec<Var> {
        Vec::new()
    }

    fn is_goal(&self, assignment: &[Option<Val>]) -> bool {
        self.simulate(assignment) == ParseStatus::Success
    }

    fn branchable(&self, state: &SearchState) -> Vec<Var> {
        match self.simulate(&state.assignment) {
            ParseStatus::Pending { choice, .. } => alloc::vec![choice],
            _ => Vec::new(),
        }
    }

    fn evidence(&self, state: &SearchState) -> Evidence {
        match self.simulate(&state.assignment) {
            ParseStatus::Pending { cursor, stack, .. } => Evidence::Parse { cursor, stack },
            ParseStatus::Failure { cursor } => Evidence::Parse { cursor, stack: Vec::new() },
            ParseStatus::Success => Evidence::None,
        }
    }

    fn hint(&self, _state: &SearchState, _var: Var) -> VarHint {
        VarHint { occurrences: 0, preferred: 0 }
    }
}

/// Reference recognizer: all end positions reachable from each nonterminal.
pub fn recognizes(input: &[PegTok]) -> bool {
    fn expr(s: &[PegTok], i: usize, depth: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        if depth > 2 * s.len() + 2 {
            return out;
        }
        for j in term(s, i, depth + 1) {
            out.insert(j);
            if s.get(j) == Some(&PegTok::Plus) {
                out.extend(expr(s, j + 1, depth + 1));
            }
        }
        out
    }
    fn term(s: &[PegTok], i: usize, depth: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        for j in factor(s, i, depth + 1) {
            out.insert(j);
            if s.get(j) == Some(&PegTok::Star) {
                out.extend(term(s, j + 1, depth + 1));
            }
        }
        out
    }
    fn factor(s: &[PegTok], i: usize, depth: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        if s.get(i) == Some(&PegTok::Open) {
            for j in expr(s, i + 1, depth + 1) {
                if s.get(j) == Some(&PegTok::Close) {
                    out.insert(j + 1);
                }
            }
        }
        if s.get(i) == Some(&PegTok::Num) {
            out.insert(i + 1);
            if s.get(i + 1) == Some(&PegTok::Num) {
                out.insert(i + 2);
            }
        }
        out
    }
    expr(input, 0, 0).contains(&input.len())
}
