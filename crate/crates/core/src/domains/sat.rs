//! CNF formulas and the unit-propagation adapter.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::search::{
    ClauseVerdict, DomainAdapter, Evidence, Forced, LitVerdict, Propagation, SearchState, Truth, Val, ValueSet, Var, VarHint,
};

pub const FALSE: Val = 0;
pub const TRUE: Val = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Lit {
    pub var: Var,
    pub positive: bool,
}

impl Lit {
    pub fn pos(var: Var) -> Self {
        Self { var, positive: true }
    }

    pub fn neg(var: Var) -> Self {
        Self { var, positive: false }
    }

    pub fn value(self, assignment: &[Option<Val>]) -> Truth {
        match assignment[self.var as usize] {
            None => Truth::Unknown,
            Some(v) if (v == TRUE) == self.positive => Truth::True,
            Some(_) => Truth::False,
        }
    }

    /// Value that makes the literal true.
    pub fn satisfying(self) -> Val {
        if self.positive {
            TRUE
        } else {
            FALSE
        }
    }

    /// Signed 1-based DIMACS integer.
    pub fn dimacs(self) -> i64 {
        let v = self.var as i64 + 1;
        if self.positive {
            v
        } else {
            -v
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Cnf {
    pub num_vars: usize,
    pub clauses: Vec<Vec<Lit>>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum DimacsError {
    #[error("missing or malformed problem line")]
    Header,
    #[error("bad literal {0:?}")]
    Literal(String),
    #[error("literal out of range: {0}")]
    Range(i64),
    #[error("expected {expected} clauses, found {found}")]
    Count { expected: usize, found: usize },
}

impl Cnf {
    pub fn new(num_vars: usize, clauses: Vec<Vec<Lit>>) -> Self {
        Self { num_vars, clauses }
    }

    /// Build from signed 1-based integers, DIMACS style.
    pub fn from_ints(num_vars: usize, clauses: &[&[i64]]) -> Self {
        let clauses = clauses
            .iter()
            .map(|c| c.iter().map(|&l| Lit { var: (l.unsigned_abs() - 1) as Var, positive: l > 0 }).collect())
            .collect();
        Self { num_vars, clauses }
    }

    pub fn clause_truth(&self, c: usize, assignment: &[Option<Val>]) -> Truth {
        let mut unknown = false;
        for l in &self.clauses[c] {
            match l.value(assignment) {
                Truth::True => return Truth::True,
                Truth::Unknown => unknown = true,
                Truth::False => {}
            }
        }
        if unknown {
            Truth::Unknown
        } else {
            Truth::False
        }
    }

    pub fn satisfied_by(&self, assignment: &[Option<Val>]) -> bool {
        (0..self.clauses.len()).all(|c| self.clause_truth(c, assignment) == Truth::True)
    }

    pub fn to_dimacs(&self) -> String {
        let mut s = format!("p cnf {} {}\n", self.num_vars, self.clauses.len());
        for c in &self.clauses {
            for l in c {
                s.push_str(&format!("{} ", l.dimacs()));
            }
            s.push_str("0\n");
        }
        s
    }

    pub fn from_dimacs(text: &str) -> Result<Self, DimacsError> {
        let mut header: Option<(usize, usize)> = None;
        let mut clauses = Vec::new();
        let mut cur = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('c') || line.starts_with('%') {
                continue;
            }
            if line.starts_with('p') {
                let parts: Vec<&str> = line.split_whitespace().collect();
                if parts.len() != 4 || parts[1] != "cnf" {
                    return Err(DimacsError::Header);
                }
                let n = parts[2].parse().map_err(|_| DimacsError::Header)?;
                let m = parts[3].parse().map_err(|_| DimacsError::Header)?;
                header = Some((n, m));
                continue;
            }
            let (n, _) = header.ok_or(DimacsError::Header)?;
            for tok in line.split_whitespace() {
                let l: i64 = tok.parse().map_err(|_| DimacsError::Literal(tok.into()))?;
                if l == 0 {
                    clauses.push(core::mem::take(&mut cur));
                } else {
                    if l.unsigned_abs() as usize > n {
                        return Err(DimacsError::Range(l));
                    }
                    cur.push(Lit { var: (l.unsigned_abs() - 1) as Var, positive: l > 0 });
                }
            }
        }
        let (n, m) = header.ok_or(DimacsError::Header)?;
        if !cur.is_empty() {
            clauses.push(cur);
        }
        if clauses.len() != m {
            return Err(DimacsError::Count { expected: m, found: clauses.len() });
        }
        Ok(Self { num_vars: n, clauses })
    }

    /// Simplified formula under an assignment: satisfied clauses dropped,
    /// falsified literals deleted. Clause indices are kept.
    pub fn residual(&self, assignment: &[Option<Val>]) -> Vec<(u32, Vec<Lit>)> {
        let mut out = Vec::new();
        for (i, c) in self.clauses.iter().enumerate() {
            if self.clause_truth(i, assignment) == Truth::True {
                continue;
            }
            out.push((i as u32, c.iter().copied().filter(|l| l.value(assignment) == Truth::Unknown).collect()));
        }
        out
    }

    /// Positive and negative occurrences of `var` among clauses not yet satisfied.
    pub fn open_occurrences(&self, assignment: &[Option<Val>], var: Var) -> (u32, u32) {
        let (mut p, mut n) = (0, 0);
        for (i, c) in self.clauses.iter().enumerate() {
            if self.clause_truth(i, assignment) == Truth::True {
                continue;
            }
            for l in c.iter().filter(|l| l.var == var) {
                if l.positive {
                    p += 1;
                } else {
                    n += 1;
                }
            }
        }
        (p, n)
    }
}

impl DomainAdapter for Cnf {
    fn num_vars(&self) -> usize {
        self.num_vars
    }

    fn domain(&self, assignment: &[Option<Val>], var: Var) -> ValueSet {
        match assignment[var as usize] {
            Some(v) => ValueSet::single(v),
            None => ValueSet::full(2),
        }
    }

    /// Repeated passes over the clauses in index order. A unit clause assigns
    /// its literal immediately; the first falsified clause stops propagation.
    fn propagate(&self, assignment: &mut [Option<Val>]) -> Propagation {
        let mut out = Propagation::default();
        loop {
            let mut changed = false;
            for (ci, clause) in self.clauses.iter().enumerate() {
                let mut unit = None;
                let mut open = 0;
                let mut sat = false;
                for &l in clause {
                    match l.value(assignment) {
                        Truth::True => {
                            sat = true;
                            break;
                        }
                        Truth::Unknown => {
                            open += 1;
                            unit = Some(l);
                        }
                        Truth::False => {}
                    }
                }
                if sat {
                    continue;
                }
                if open == 0 {
                    out.conflict = Some((ci as u32, clause.iter().map(|l| l.var).collect()));
                    return out;
                }
                if open == 1 {
                    let l = unit.unwrap();
                    assignment[l.var as usize] = Some(l.satisfying());
                    out.forced.push(Forced { var: l.var, value: l.satisfying(), reason: ci as u32 });
                    changed = true;
                }
            }
            if !changed {
                return out;
            }
        }
    }

    fn reason_vars(&self, reason: u32, var: Var) -> Vec<Var> {
        self.clauses[reason as usize].iter().map(|l| l.var).filter(|&v| v != var).collect()
    }

    fn is_goal(&self, assignment: &[Option<Val>]) -> bool {
        self.satisfied_by(assignment)
    }

    fn domain_reasons(&self, _assignment: &[Option<Val>], _var: Var) -> Vec<Var> {
        Vec::new()
    }

    /// The falsified clause when a conflict is exposed, otherwise the first
    /// clause that is not yet satisfied.
    fn evidence(&self, state: &SearchState) -> Evidence {
        let a = &state.assignment;
        let id = match &state.conflict {
            Some(c) => Some(c.id as usize),
            None => (0..self.clauses.len()).find(|&i| self.clause_truth(i, a) != Truth::True),
        };
        let Some(id) = id else {
            return Evidence::None;
        };
        let literals: Vec<LitVerdict> =
            self.clauses[id].iter().map(|l| LitVerdict { var: l.var, positive: l.positive, value: l.value(a) }).collect();
        let open = literals.iter().filter(|l| l.value == Truth::Unknown).count();
        let verdict = if literals.iter().any(|l| l.value == Truth::True) || open >= 2 {
            ClauseVerdict::SatOk
        } else if open == 1 {
            ClauseVerdict::Unit
        } else {
            ClauseVerdict::Conflict
        };
        Evidence::Clause { id: id as u32, literals, verdict }
    }

    fn hint(&self, state: &SearchState, var: Var) -> VarHint {
        let (p, n) = self.open_occurrences(&state.assignment, var);
        VarHint { occurrences: p + n, preferred: if p >= n { TRUE } else { FALSE } }
    }
}

/// The four-clause running example over three variables.
pub fn example_cnf() -> Cnf {
    Cnf::from_ints(3, &[&[1, 2, 3], &[-1, -2], &[-1, 2, -3], &[1, -2, -3]])
}
