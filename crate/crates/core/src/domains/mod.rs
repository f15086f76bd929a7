//! Problem domains: 3-SAT, graph coloring, tree traversal, and a small
//! ambiguous expression grammar, plus generators and exact oracles.

pub mod coloring;
pub mod gen;
pub mod oracle;
pub mod peg;
pub mod sat;
pub mod tree;

use alloc::vec::Vec;

use crate::search::{DomainAdapter, Evidence, Propagation, SearchState, Val, ValueSet, Var, VarHint};

pub use coloring::{Coloring, Graph};
pub use peg::{PegTask, PegTok};
pub use sat::{Cnf, Lit};
pub use tree::Tree;

/// A searchable instance of any domain driven through the generic engine.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Instance {
    Sat(Cnf),
    Coloring(Coloring),
    Peg(PegTask),
}

macro_rules! delegate {
    ($self:ident, $inner:ident => $e:expr) => {
        match $self {
            Instance::Sat($inner) => $e,
            Instance::Coloring($inner) => $e,
            Instance::Peg($inner) => $e,
        }
    };
}

impl DomainAdapter for Instance {
    fn num_vars(&self) -> usize {
        delegate!(self, x => x.num_vars())
    }
    fn domain(&self, assignment: &[Option<Val>], var: Var) -> ValueSet {
        delegate!(self, x => x.domain(assignment, var))
    }
    fn propagate(&self, assignment: &mut [Option<Val>]) -> Propagation {
        delegate!(self, x => x.propagate(assignment))
    }
    fn reason_vars(&self, reason: u32, var: Var) -> Vec<Var> {
        delegate!(self, x => x.reason_vars(reason, var))
    }
    fn is_goal(&self, assignment: &[Option<Val>]) -> bool {
        delegate!(self, x => x.is_goal(assignment))
    }
    fn domain_reasons(&self, assignment: &[Option<Val>], var: Var) -> Vec<Var> {
        delegate!(self, x => x.domain_reasons(assignment, var))
    }
    fn branchable(&self, state: &SearchState) -> Vec<Var> {
        delegate!(self, x => x.branchable(state))
    }
    fn evidence(&self, state: &SearchState) -> Evidence {
        delegate!(self, x => x.evidence(state))
    }
    fn hint(&self, state: &SearchState, var: Var) -> VarHint {
        delegate!(self, x => x.hint(state, var))
    }
}
