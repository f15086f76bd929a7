use alloc::vec::Vec;

use super::state::{SearchState, Val, ValueSet, Var};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Forced {
    pub var: Var,
    pub value: Val,
    pub reason: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Propagation {
    pub forced: Vec<Forced>,
    /// Failing constraint id and the assigned variables it depends on.
    pub conflict: Option<(u32, Vec<Var>)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Truth {
    True,
    False,
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ClauseVerdict {
    SatOk,
    Unit,
    Conflict,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LitVerdict {
    pub var: Var,
    pub positive: bool,
    pub value: Truth,
}

/// Domain-specific record of what propagation looked at for a state.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Evidence {
    None,
    Clause {
        id: u32,
        literals: Vec<LitVerdict>,
        verdict: ClauseVerdict,
    },
    Parse {
        cursor: u32,
        /// Pending grammar symbols, top of stack first.
        stack: Vec<u8>,
    },
}

/// Per-variable hints consumed by the symbolic heuristics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarHint {
    pub occurrences: u32,
    pub preferred: Val,
}

/// The contract a problem domain provides to the search engine.
///
/// Propagation is recomputed from the assignment, so domains are a pure
/// function of the assignment and the engine never stores undo information
/// beyond the trail.
pub trait DomainAdapter {
    fn num_vars(&self) -> usize;

    /// Current domain of `var`; a singleton when assigned.
    fn domain(&self, assignment: &[Option<Val>], var: Var) -> ValueSet;

    /// Run propagation to a fixpoint, writing forced values into `assignment`.
    fn propagate(&self, assignment: &mut [Option<Val>]) -> Propagation;

    /// Variables whose values caused `reason` to force `var`.
    fn reason_vars(&self, reason: u32, var: Var) -> Vec<Var>;

    fn is_goal(&self, assignment: &[Option<Val>]) -> bool;

    /// Assigned variables whose values narrowed the domain of an open `var`.
    /// The default blames every assigned variable.
    fn domain_reasons(&self, assignment: &[Option<Val>], _var: Var) -> Vec<Var> {
        (0..assignment.len() as Var).filter(|&v| assignment[v as usize].is_some()).collect()
    }

    /// Variables the policy may branch on.
    fn branchable(&self, state: &SearchState) -> Vec<Var> {
        (0..state.num_vars() as Var)
            .filter(|&v| state.assignment[v as usize].is_none() && !state.domains[v as usize].is_empty())
            .collect()
    }

    fn evidence(&self, state: &SearchState) -> Evidence;

    fn hint(&self, state: &SearchState, var: Var) -> VarHint;
}
