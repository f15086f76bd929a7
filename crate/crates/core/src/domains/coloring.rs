//! Graph coloring with forward checking.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::search::{DomainAdapter, Evidence, Propagation, SearchState, Val, ValueSet, Var, VarHint};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Graph {
    /// Sorted neighbor lists.
    pub adj: Vec<Vec<u32>>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EdgeListError {
    #[error("malformed header")]
    Header,
    #[error("malformed edge line {0:?}")]
    Edge(String),
    #[error("node out of range in edge ({0}, {1})")]
    Range(u32, u32),
}

impl Graph {
    pub fn new(n: usize) -> Self {
        Self { adj: alloc::vec![Vec::new(); n] }
    }

    pub fn from_edges(n: usize, edges: &[(u32, u32)]) -> Self {
        let mut g = Self::new(n);
        for &(a, b) in edges {
            g.add_edge(a, b);
        }
        g
    }

    pub fn add_edge(&mut self, a: u32, b: u32) {
        if a == b || self.adj[a as usize].contains(&b) {
            return;
        }
        self.adj[a as usize].push(b);
        self.adj[b as usize].push(a);
        self.adj[a as usize].sort_unstable();
        self.adj[b as usize].sort_unstable();
    }

    pub fn num_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut e = Vec::new();
        for (a, ns) in self.adj.iter().enumerate() {
            for &b in ns.iter().filter(|&&b| b > a as u32) {
                e.push((a as u32, b));
            }
        }
        e
    }

    /// `n m` header line, then one `a b` line per edge.
    pub fn to_edge_list(&self) -> String {
        let edges = self.edges();
        let mut s = format!("{} {}\n", self.num_nodes(), edges.len());
        for (a, b) in edges {
            s.push_str(&format!("{a} {b}\n"));
        }
        s
    }

    pub fn from_edge_list(text: &str) -> Result<Self, EdgeListError> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or(EdgeListError::Header)?;
        let h: Vec<usize> = header.split_whitespace().map(|t| t.parse()).collect::<Result<_, _>>().map_err(|_| EdgeListError::Header)?;
        if h.len() != 2 {
            return Err(EdgeListError::Header);
        }
        let mut g = Self::new(h[0]);
        let mut count = 0;
        for line in lines {
            let p: Vec<u32> = line.split_whitespace().map(|t| t.parse()).collect::<Result<_, _>>().map_err(|_| EdgeListError::Edge(line.into()))?;
            if p.len() != 2 {
                return Err(EdgeListError::Edge(line.into()));
            }
            if p[0] as usize >= h[0] || p[1] as usize >= h[0] {
                return Err(EdgeListError::Range(p[0], p[1]));
            }
            g.add_edge(p[0], p[1]);
            count += 1;
        }
        if count != h[1] {
            return Err(EdgeListError::Header);
        }
        Ok(g)
    }

    pub fn cycle(n: usize) -> Self {
        let edges: Vec<(u32, u32)> = (0..n as u32).map(|i| (i, (i + 1) % n as u32)).collect();
        Self::from_edges(n, &edges)
    }
}

/// A coloring instance: node `i` is variable `i`, colors are values `0..k`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Coloring {
    pub graph: Graph,
    pub colors: usize,
}

impl Coloring {
    pub fn new(graph: Graph, colors: usize) -> Self {
        assert!(colors <= 64, "at most 64 colors");
        Self { graph, colors }
    }

    pub fn is_proper(&self, assignment: &[Option<Val>]) -> bool {
        assignment.iter().all(|a| a.is_some())
            && self.graph.edges().iter().all(|&(a, b)| assignment[a as usize] != assignment[b as usize])
    }
}

impl DomainAdapter for Coloring {
    fn num_vars(&self) -> usize {
        self.graph.num_nodes()
    }

    fn domain(&self, assignment: &[Option<Val>], var: Var) -> ValueSet {
        if let Some(v) = assignment[var as usize] {
            return ValueSet::single(v);
        }
        let mut d = ValueSet::full(self.colors);
        for &u in &self.graph.adj[var as usize] {
            if let Some(c) = assignment[u as usize] {
                d.remove(c);
            }
        }
        d
    }

    /// Colors of assigned neighbors are removed from open domains; the first
    /// open node with an empty domain is a conflict.
    fn propagate(&self, assignment: &mut [Option<Val>]) -> Propagation {
        let mut out = Propagation::default();
        for v in 0..self.num_vars() as Var {
            if assignment[v as usize].is_none() && self.domain(assignment, v).is_empty() {
                let vars = self.graph.adj[v as usize].iter().copied().filter(|&u| assignment[u as usize].is_some()).collect();
                out.conflict = Some((v, vars));
                break;
            }
        }
        out
    }

    fn reason_vars(&self, _reason: u32, _var: Var) -> Vec<Var> {
        Vec::new()
    }

    fn is_goal(&self, assignment: &[Option<Val>]) -> bool {
        self.is_proper(assignment)
    }

    fn domain_reasons(&self, assignment: &[Option<Val>], var: Var) -> Vec<Var> {
        self.graph.adj[var as usize].iter().copied().filter(|&u| assignment[u as usize].is_some()).collect()
    }

    fn evidence(&self, _state: &SearchState) -> Evidence {
        Evidence::None
    }

    fn hint(&self, state: &SearchState, var: Var) -> VarHint {
        let open = self.graph.adj[var as usize].iter().filter(|&&u| state.assignment[u as usize].is_none()).count();
        VarHint { occurrences: open as u32, preferred: state.domains[var as usize].first().unwrap_or(0) }
    }
}
