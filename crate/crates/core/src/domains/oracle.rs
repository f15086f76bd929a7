//! Exact solvers written independently of the propagation adapters. They
//! serve as ground truth for viability and for cross-checking propagation.

use alloc::vec::Vec;

use super::coloring::Coloring;
use super::peg::PegTask;
use super::sat::{Cnf, FALSE, TRUE};
use super::Instance;
use crate::search::Val;

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("node limit reached")]
pub struct ResourceLimit;

/// Signed-literal clause representation, deliberately different from the adapter.
fn literal_sets(cnf: &Cnf) -> Vec<Vec<i64>> {
    cnf.clauses.iter().map(|c| c.iter().map(|l| l.dimacs()).collect()).collect()
}

fn lit_true(l: i64, a: &[Option<bool>]) -> Option<bool> {
    a[(l.unsigned_abs() - 1) as usize].map(|v| v == (l > 0))
}

/// Unit-propagation closure computed by scanning for any unit clause until
/// none is left. Returns `None` on a falsified clause.
pub fn unit_closure(clauses: &[Vec<i64>], a: &mut [Option<bool>]) -> Option<()> {
    loop {
        let mut progress = false;
        for c in clauses {
            let mut open = Vec::new();
            let mut sat = false;
            for &l in c {
                match lit_true(l, a) {
                    Some(true) => sat = true,
                    None => open.push(l),
                    Some(false) => {}
                }
            }
            if sat {
                continue;
            }
            match open.len() {
                0 => return None,
                1 => {
                    let l = open[0];
                    a[(l.unsigned_abs() - 1) as usize] = Some(l > 0);
                    progress = true;
                }
                _ => {}
            }
        }
        if !progress {
            return Some(());
        }
    }
}

fn dpll(clauses: &[Vec<i64>], a: &mut Vec<Option<bool>>, nodes: &mut u64, limit: u64) -> Result<bool, ResourceLimit> {
    *nodes += 1;
    if *nodes > limit {
        return Err(ResourceLimit);
    }
    if unit_closure(clauses, a).is_none() {
        return Ok(false);
    }
    let all_sat = clauses.iter().all(|c| c.iter().any(|&l| lit_true(l, a) == Some(true)));
    if all_sat {
        return Ok(true);
    }
    let Some(v) = a.iter().position(|x| x.is_none()) else {
        return Ok(false);
    };
    for value in [true, false] {
        let mut b = a.clone();
        b[v] = Some(value);
        if dpll(clauses, &mut b, nodes, limit)? {
            *a = b;
            return Ok(true);
        }
    }
    Ok(false)
}

/// Complete DPLL from a partial assignment. Returns a full witness when
/// satisfiable; unassigned variables in a satisfying partial assignment are
/// set to false.
pub fn solve_cnf(cnf: &Cnf, partial: &[Option<Val>], node_limit: u64) -> Result<Option<Vec<Val>>, ResourceLimit> {
    let clauses = literal_sets(cnf);
    let mut a: Vec<Option<bool>> = partial.iter().map(|v| v.map(|x| x == TRUE)).collect();
    let mut nodes = 0;
    if dpll(&clauses, &mut a, &mut nodes, node_limit)? {
        Ok(Some(a.iter().map(|v| if v.unwrap_or(false) { TRUE } else { FALSE }).collect()))
    } else {
        Ok(None)
    }
}

/// Plain backtracking coloring in index order.
pub fn solve_coloring(inst: &Coloring, partial: &[Option<Val>], node_limit: u64) -> Result<Option<Vec<Val>>, ResourceLimit> {
    fn ok(inst: &Coloring, a: &[Option<Val>], v: usize, c: Val) -> bool {
        inst.graph.adj[v].iter().all(|&u| a[u as usize] != Some(c))
    }
    fn go(inst: &Coloring, a: &mut Vec<Option<Val>>, nodes: &mut u64, limit: u64) -> Result<bool, ResourceLimit> {
        *nodes += 1;
        if *nodes > limit {
            return Err(ResourceLimit);
        }
        let Some(v) = a.iter().position(|x| x.is_none()) else {
            return Ok(true);
        };
        for c in 0..inst.colors as Val {
            if ok(inst, a, v, c) {
                a[v] = Some(c);
                if go(inst, a, nodes, limit)? {
                    return Ok(true);
                }
                a[v] = None;
            }
        }
        Ok(false)
    }
    for (v, c) in partial.iter().enumerate() {
        if let Some(c) = c {
            if !ok(inst, partial, v, *c) {
                return Ok(None);
            }
        }
    }
    let mut a = partial.to_vec();
    let mut nodes = 0;
    Ok(go(inst, &mut a, &mut nodes, node_limit)?.then(|| a.iter().map(|x| x.unwrap()).collect()))
}

/// Exhaustive search over remaining choices; the witness is the choice list.
pub fn solve_peg(task: &PegTask, partial: &[Option<Val>]) -> Option<Vec<Val>> {
    use super::peg::ParseStatus;
    fn go(task: &PegTask, a: &mut Vec<Option<Val>>) -> bool {
        match task.simulate(a) {
            ParseStatus::Success => true,
            ParseStatus::Failure { .. } => false,
            ParseStatus::Pending { choice, kind, .. } => {
                let alts = if kind == super::peg::sym::FACTOR { 3 } else { 2 };
                for alt in 0..alts {
                    a[choice as usize] = Some(alt);
                    if go(task, a) {
                        return true;
                    }
                }
                a[choice as usize] = None;
                false
            }
        }
    }
    let mut a = partial.to_vec();
    go(task, &mut a).then(|| a.iter().map(|x| x.unwrap_or(0)).collect())
}

/// Whether a solution extends the partial assignment.
pub fn viable(inst: &Instance, partial: &[Option<Val>], node_limit: u64) -> Result<bool, ResourceLimit> {
    Ok(oracle_solve(inst, partial, node_limit)?.is_some())
}

pub fn oracle_solve(inst: &Instance, partial: &[Option<Val>], node_limit: u64) -> Result<Option<Vec<Val>>, ResourceLimit> {
    match inst {
        Instance::Sat(c) => solve_cnf(c, partial, node_limit),
        Instance::Coloring(c) => solve_coloring(c, partial, node_limit),
        Instance::Peg(p) => Ok(solve_peg(p, partial)),
    }
}
