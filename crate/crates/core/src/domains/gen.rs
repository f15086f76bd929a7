//! Seeded instance generators.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng as _;

use super::coloring::Graph;
use super::oracle::solve_cnf;
use super::sat::{Cnf, Lit, TRUE};
use crate::rng::Rng;
use crate::search::Val;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum GenerationError {
    #[error("no satisfiable instance after {0} attempts")]
    Exhausted(usize),
    #[error("cannot place {clauses} distinct clauses over {vars} variables")]
    TooDense { vars: usize, clauses: usize },
}

pub fn num_clauses(n: usize, ratio: f64) -> usize {
    let m = ratio * n as f64;
    (m + 0.5) as usize
}

fn random_clause(n: usize, rng: &mut Rng) -> Vec<Lit> {
    let mut c: Vec<Lit> = sample(rng, n, 3).into_iter().map(|v| Lit { var: v as u32, positive: rng.gen_bool(0.5) }).collect();
    c.sort();
    c
}

/// Planted 3-SAT: draws a hidden assignment and keeps only distinct clauses
/// (three distinct variables each) that the assignment satisfies.
pub fn planted_3sat(n: usize, ratio: f64, rng: &mut Rng) -> Result<(Cnf, Vec<Val>), GenerationError> {
    assert!(n >= 3);
    let m = num_clauses(n, ratio);
    // Each variable triple admits seven satisfied sign patterns.
    let capacity = n * (n - 1) * (n - 2) / 6 * 7;
    if m > capacity {
        return Err(GenerationError::TooDense { vars: n, clauses: m });
    }
    let planted: Vec<Val> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    let mut seen = BTreeSet::new();
    let mut clauses = Vec::with_capacity(m);
    while clauses.len() < m {
        let c = random_clause(n, rng);
        let sat = c.iter().any(|l| (planted[l.var as usize] == TRUE) == l.positive);
        if sat && seen.insert(c.clone()) {
            clauses.push(c);
        }
    }
    Ok((Cnf::new(n, clauses), planted))
}

/// Uniform random 3-SAT kept only when satisfiable by the exact solver.
pub fn random_3sat(n: usize, ratio: f64, rng: &mut Rng, attempts: usize) -> Result<Cnf, GenerationError> {
    let m = num_clauses(n, ratio);
    for _ in 0..attempts {
        let mut seen = BTreeSet::new();
        let mut clauses = Vec::with_capacity(m);
        while clauses.len() < m {
            let c = random_clause(n, rng);
            if seen.insert(c.clone()) {
                clauses.push(c);
            }
        }
        let cnf = Cnf::new(n, clauses);
        if let Ok(Some(_)) = solve_cnf(&cnf, &alloc::vec![None; n], u64::MAX) {
            return Ok(cnf);
        }
    }
    Err(GenerationError::Exhausted(attempts))
}

/// Erdős–Rényi G(n, p).
pub fn gnp(n: usize, p: f64, rng: &mut Rng) -> Graph {
    let mut g = Graph::new(n);
    for a in 0..n as u32 {
        for b in a + 1..n as u32 {
            if rng.gen_bool(p) {
                g.add_edge(a, b);
            }
        }
    }
    g
}
