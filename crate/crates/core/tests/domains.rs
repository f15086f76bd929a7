use std::collections::BTreeSet;

use proptest::prelude::*;
use ssa_core::domains::gen::{gnp, num_clauses, planted_3sat, random_3sat};
use ssa_core::domains::oracle::{solve_coloring, solve_peg};
use ssa_core::domains::peg::recognizes;
use ssa_core::domains::sat::TRUE;
use ssa_core::domains::tree::Move;
use ssa_core::domains::*;
use ssa_core::rng;
use ssa_core::search::*;

#[test]
fn planted_clause_count_at_ratio_four() {
    assert_eq!(num_clauses(50, 4.0), 200);
    assert_eq!(num_clauses(50, 4.26), 213);
    let (cnf, _) = planted_3sat(50, 4.0, &mut rng::rng(1)).unwrap();
    assert_eq!(cnf.clauses.len(), 200);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn planted_instances_respect_invariants(seed in any::<u64>(), n in 5usize..40) {
        let (cnf, planted) = planted_3sat(n, 4.0, &mut rng::rng(seed)).unwrap();
        let mut seen = BTreeSet::new();
        for c in &cnf.clauses {
            let vars: BTreeSet<u32> = c.iter().map(|l| l.var).collect();
            prop_assert_eq!(vars.len(), 3);
            prop_assert!(c.iter().any(|l| (planted[l.var as usize] == TRUE) == l.positive));
            let mut key = c.clone();
            key.sort();
            prop_assert!(seen.insert(key), "duplicate clause");
        }
        let full: Vec<Option<u8>> = planted.iter().map(|&v| Some(v)).collect();
        prop_assert!(cnf.satisfied_by(&full));
    }

    #[test]
    fn dimacs_round_trip(seed in any::<u64>(), n in 5usize..20) {
        let (cnf, _) = planted_3sat(n, 3.0, &mut rng::rng(seed)).unwrap();
        let text = cnf.to_dimacs();
        let header = format!("p cnf {} {}", n, cnf.clauses.len());
        prop_assert!(text.starts_with(&header));
        prop_assert_eq!(Cnf::from_dimacs(&text).unwrap(), cnf);
    }

    #[test]
    fn edge_list_round_trip(seed in any::<u64>(), n in 1usize..25) {
        let g = gnp(n, 0.3, &mut rng::rng(seed));
        prop_assert_eq!(Graph::from_edge_list(&g.to_edge_list()).unwrap(), g);
    }

    #[test]
    fn tree_text_round_trip_and_orders(seed in any::<u64>(), n in 1usize..30) {
        let mut r = rng::rng(seed);
        let t = Tree::random(n, &[2, 3, 4], &mut r).relabel(64, &mut r);
        let back = Tree::from_text(&t.to_text()).unwrap();
        prop_assert_eq!(back.to_text(), t.to_text());
        let labels = |t: &Tree| t.dfs_order().iter().map(|&u| t.label[u as usize]).collect::<Vec<_>>();
        prop_assert_eq!(labels(&back), labels(&t));
        for order in [t.dfs_order(), t.bfs_order()] {
            let set: BTreeSet<u32> = order.iter().copied().collect();
            prop_assert_eq!(set.len(), n);
            prop_assert_eq!(order[0], 0);
        }
        let moves = t.dfs_moves();
        prop_assert_eq!(moves.len(), 2 * (n - 1) + 1);
        let visits: Vec<u32> = moves.iter().filter_map(|m| match m { Move::Visit(c) => Some(*c), Move::Up => None }).collect();
        prop_assert_eq!(&visits[..], &t.dfs_order()[1..]);
    }

    /// Forward checking must agree with recomputing every open domain from scratch.
    #[test]
    fn coloring_domains_match_recomputation(seed in any::<u64>(), n in 2usize..14, k in 2usize..5) {
        let mut r = rng::rng(seed);
        let inst = Coloring::new(gnp(n, 0.35, &mut r), k);
        let mut agent = PolicyVerifier::new(RandomPolicy::new(seed), Reactive);
        let res = run_search(&inst, &mut agent, &RunConfig { budget_tokens: u64::MAX, ..RunConfig::default() }).unwrap();
        let expected = solve_coloring(&inst, &vec![None; n], u64::MAX).unwrap().is_some();
        prop_assert_eq!(res.solved(), expected);
        let mut states: Vec<&SearchState> = res.events.iter().map(|e| &e.state).collect();
        states.push(&res.final_state);
        for s in states {
            for v in 0..n {
                let want: u64 = match s.assignment[v] {
                    Some(c) => 1 << c,
                    None => {
                        let used: u64 = inst.graph.adj[v].iter().filter_map(|&u| s.assignment[u as usize]).fold(0, |m, c| m | (1 << c));
                        ((1u64 << k) - 1) & !used
                    }
                };
                prop_assert_eq!(s.domains[v].0, want);
            }
            let wiped = (0..n).any(|v| s.assignment[v].is_none() && s.domains[v].is_empty());
            prop_assert_eq!(s.conflict.is_some(), wiped);
        }
    }

    #[test]
    fn peg_search_matches_reference(toks in prop::collection::vec(0usize..5, 0..8)) {
        let input: Vec<PegTok> = toks.iter().map(|&i| PegTok::ALL[i]).collect();
        let task = PegTask::new(input.clone());
        let mut agent = PolicyVerifier::new(OccurrenceDomain, Reactive);
        let res = run_search(&task, &mut agent, &RunConfig { budget_tokens: u64::MAX, ..RunConfig::default() }).unwrap();
        let want = recognizes(&input);
        prop_assert_eq!(res.solved(), want);
        prop_assert_eq!(solve_peg(&task, &vec![None; task.max_choices()]).is_some(), want);
    }
}

#[test]
fn gnp_expected_edges() {
    let mut total = 0usize;
    let reps = 400;
    for s in 0..reps {
        total += gnp(30, 0.35, &mut rng::child_rng(5, 0, s)).edges().len();
    }
    let mean = total as f64 / reps as f64;
    // 435 pairs * 0.35 = 152.25; sd of the mean is about 0.5.
    assert!((mean - 152.25).abs() < 2.5, "mean edges {mean}");
}

#[test]
fn random_sat_is_filtered_by_oracle() {
    let cnf = random_3sat(20, 4.26, &mut rng::rng(7), 50).unwrap();
    assert_eq!(cnf.clauses.len(), 85);
    let w = ssa_core::domains::oracle::solve_cnf(&cnf, &vec![None; 20], u64::MAX).unwrap().unwrap();
    assert!(cnf.satisfied_by(&w.iter().map(|&v| Some(v)).collect::<Vec<_>>()));
}

#[test]
fn generation_fails_when_too_dense() {
    assert!(planted_3sat(3, 4.0, &mut rng::rng(0)).is_err());
}

#[test]
fn peg_ambiguous_factor_needs_backtracking() {
    let task = PegTask::parse_text("NUM NUM + NUM").unwrap();
    let mut agent = PolicyVerifier::new(OccurrenceDomain, Reactive);
    let res = run_search(&task, &mut agent, &RunConfig::default()).unwrap();
    assert!(res.solved());
    assert!(res.backtracks >= 1, "the single-NUM alternative is tried first and must be undone");
    assert!(!recognizes(&PegTask::parse_text("NUM +").unwrap().input));
    assert!(recognizes(&PegTask::parse_text("( NUM NUM ) * NUM").unwrap().input));
}

#[test]
fn star_tree_text() {
    assert_eq!(Tree::star(3).to_text(), "N0 ( N1 N2 N3 )");
    assert!(Tree::from_text("N0 ( N1").is_err());
    assert!(Tree::from_text("N0 N1").is_err());
}

#[test]
fn dimacs_errors_are_reported() {
    assert!(Cnf::from_dimacs("1 2 0").is_err());
    assert!(Cnf::from_dimacs("p cnf 2 1\n3 0\n").is_err());
    assert!(Cnf::from_dimacs("p cnf 2 2\n1 0\n").is_err());
}
