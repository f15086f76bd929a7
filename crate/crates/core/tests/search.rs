use proptest::prelude::*;
use ssa_core::domains::oracle::{solve_cnf, unit_closure};
use ssa_core::domains::sat::{example_cnf, Cnf, Lit, FALSE, TRUE};
use ssa_core::rng;
use ssa_core::search::*;

fn reactive_run<P: Policy<Cnf>>(cnf: &Cnf, policy: P, chronological: bool) -> RunResult {
    let mut agent = PolicyVerifier::new(policy, Reactive);
    let cfg = RunConfig { budget_tokens: u64::MAX, chronological, ..RunConfig::default() };
    run_search(cnf, &mut agent, &cfg).unwrap()
}

#[test]
fn running_example_three_decisions_one_backtrack() {
    let cnf = example_cnf();
    let policy = StaticOrder { order: vec![2, 0, 1], values: vec![TRUE] };
    let r = reactive_run(&cnf, policy, false);
    assert_eq!(r.termination, Termination::Solved);
    assert_eq!((r.decisions, r.backtracks), (3, 1));
    assert_eq!(r.events.len(), 3);
    assert_eq!(r.events[0].action, Action::Branch { var: 2, value: TRUE });
    assert_eq!(r.events[0].outcome, Outcome::Ok);
    assert_eq!(r.events[1].action, Action::Branch { var: 0, value: TRUE });
    assert_eq!(r.events[1].outcome, Outcome::Conflict { backjump_to: Some(1) });
    let conflicted = &r.events[2].state;
    assert_eq!(conflicted.conflict.as_ref().unwrap().id, 2, "third clause is falsified");
    assert_eq!(r.events[2].action, Action::Backtrack);
    assert_eq!(r.events[2].retried, Some((0, FALSE)));
    assert_eq!(r.events[2].outcome, Outcome::Solved);
    assert!(cnf.satisfied_by(&r.final_state.assignment));
}

#[test]
fn running_example_branch_exposes_third_clause() {
    let cnf = example_cnf();
    let engine = Engine::new(&cnf);
    let mut s = engine.state_from_trail(vec![
        TrailEntry { var: 0, value: TRUE, level: 1, forced: false, reason: None },
        TrailEntry { var: 1, value: FALSE, level: 1, forced: true, reason: Some(1) },
    ]);
    let r = engine.step(&mut s, Action::Branch { var: 2, value: TRUE }, Origin::Policy).unwrap();
    assert_eq!(s.conflict.as_ref().unwrap().id, 2);
    assert_eq!(s.conflict.as_ref().unwrap().levels, vec![1, 2]);
    assert_eq!(r.outcome, Outcome::Conflict { backjump_to: Some(1) });
}

#[test]
fn running_example_oracle_witness() {
    let w = solve_cnf(&example_cnf(), &[None, None, None], u64::MAX).unwrap().unwrap();
    assert_eq!(w, vec![TRUE, FALSE, FALSE]);
}

#[test]
fn backjump_skips_levels_the_conflict_does_not_depend_on() {
    // a=0 b=1 c=2: (!a | c) (!a | !c) fail under a=T whatever b is.
    let cnf = Cnf::from_ints(3, &[&[-1, 3], &[-1, -3], &[2, 3]]);
    let engine = Engine::new(&cnf);
    let mut s = engine.state_from_trail(vec![TrailEntry { var: 0, value: TRUE, level: 1, forced: false, reason: None }]);
    engine.step(&mut s, Action::Branch { var: 1, value: TRUE }, Origin::Policy).unwrap();
    assert_eq!(s.level, 2);
    assert_eq!(s.conflict.as_ref().unwrap().levels, vec![1]);
    assert_eq!(engine.backjump_target(&s), Some(1));
    let chrono = Engine::new(&cnf).with_chronological(true);
    assert_eq!(chrono.backjump_target(&s), Some(2));
    let r = engine.step(&mut s, Action::Backtrack, Origin::Policy).unwrap();
    assert_eq!(r.backjump_to, Some(0));
    assert_eq!(r.retried, Some((0, FALSE)));
}

#[test]
fn backjump_retries_current_level_when_it_is_implicated() {
    let cnf = example_cnf();
    let engine = Engine::new(&cnf);
    let mut s = engine.initial_state();
    engine.step(&mut s, Action::Branch { var: 2, value: TRUE }, Origin::Policy).unwrap();
    engine.step(&mut s, Action::Branch { var: 0, value: TRUE }, Origin::Policy).unwrap();
    assert_eq!(engine.backjump_target(&s), Some(2));
}

#[test]
fn exhausted_when_no_alternative_remains() {
    let cnf = Cnf::from_ints(1, &[&[1], &[-1]]);
    let engine = Engine::new(&cnf);
    let s = engine.initial_state();
    assert!(s.conflict.is_some());
    assert_eq!(engine.backjump_target(&s), None);
    let r = reactive_run(&cnf, OccurrenceDomain, false);
    assert_eq!(r.termination, Termination::Exhausted);
}

#[test]
fn policy_backtrack_without_conflict_is_inadmissible() {
    let cnf = example_cnf();
    let engine = Engine::new(&cnf);
    let mut s = engine.initial_state();
    let e = engine.step(&mut s, Action::Backtrack, Origin::Policy).unwrap_err();
    assert!(matches!(e, SearchError::InadmissibleAction(_)));
    engine.step(&mut s, Action::Branch { var: 0, value: TRUE }, Origin::Policy).unwrap();
    let e = engine.step(&mut s, Action::Branch { var: 0, value: FALSE }, Origin::Policy).unwrap_err();
    assert!(matches!(e, SearchError::InadmissibleAction(_)));
}

#[test]
fn budget_exhaustion_times_out() {
    let cnf = example_cnf();
    let mut agent = PolicyVerifier::new(StaticOrder { order: vec![2, 0, 1], values: vec![TRUE] }, Reactive);
    let cfg = RunConfig { budget_tokens: 3, ..RunConfig::default() };
    let r = run_search(&cnf, &mut agent, &cfg).unwrap();
    assert_eq!(r.termination, Termination::Timeout);
    assert!(r.tokens_used <= 3);
}

fn arb_cnf(max_vars: usize, max_clauses: usize) -> impl Strategy<Value = Cnf> {
    (1..=max_vars).prop_flat_map(move |n| {
        let lit = (0..n as u32, any::<bool>()).prop_map(|(var, positive)| Lit { var, positive });
        prop::collection::vec(prop::collection::vec(lit, 1..=3), 0..=max_clauses).prop_map(move |clauses| Cnf::new(n, clauses))
    })
}

fn check_invariants(engine: &Engine<Cnf>, s: &SearchState) {
    assert_eq!(s.frames.len() as u32, s.level);
    let mut last = 0;
    for e in &s.trail {
        assert!(e.level >= last, "trail levels must not decrease");
        last = e.level;
        assert_eq!(s.assignment[e.var as usize], Some(e.value));
    }
    assert_eq!(s.trail.len(), s.num_assigned());
    for (l, f) in s.frames.iter().enumerate() {
        let v = s.assignment[f.var as usize].expect("decision variables stay assigned");
        assert!(f.tried.contains(v));
        let e = s.entry(f.var).unwrap();
        assert_eq!((e.level, e.forced), (l as u32 + 1, false));
    }
    for v in 0..s.num_vars() as u32 {
        assert_eq!(s.domains[v as usize], engine.adapter.domain(&s.assignment, v));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn propagation_matches_closure(cnf in arb_cnf(8, 24), decisions in prop::collection::vec((0u32..8, any::<bool>()), 0..4)) {
        let mut a: Vec<Option<u8>> = vec![None; cnf.num_vars];
        for (v, b) in decisions {
            if (v as usize) < cnf.num_vars {
                a[v as usize] = Some(if b { TRUE } else { FALSE });
            }
        }
        let mut ours = a.clone();
        let prop = ssa_core::search::DomainAdapter::propagate(&cnf, &mut ours);
        let ints: Vec<Vec<i64>> = cnf.clauses.iter().map(|c| c.iter().map(|l| l.dimacs()).collect()).collect();
        let mut theirs: Vec<Option<bool>> = a.iter().map(|x| x.map(|v| v == TRUE)).collect();
        let closed = unit_closure(&ints, &mut theirs);
        prop_assert_eq!(prop.conflict.is_some(), closed.is_none());
        if closed.is_some() {
            let theirs: Vec<Option<u8>> = theirs.iter().map(|x| x.map(|b| if b { TRUE } else { FALSE })).collect();
            prop_assert_eq!(ours, theirs);
        }
    }

    #[test]
    fn exhaustive_search_agrees_with_oracle(cnf in arb_cnf(8, 30), seed in any::<u64>(), chrono in any::<bool>()) {
        let expected = solve_cnf(&cnf, &vec![None; cnf.num_vars], u64::MAX).unwrap().is_some();
        for r in [
            reactive_run(&cnf, OccurrenceDomain, chrono),
            reactive_run(&cnf, RandomPolicy::new(seed), chrono),
            reactive_run(&cnf, Vsids::new(cnf.num_vars), chrono),
        ] {
            prop_assert_eq!(r.solved(), expected);
            if expected {
                prop_assert!(cnf.satisfied_by(&r.final_state.assignment));
            } else {
                prop_assert_eq!(r.termination, Termination::Exhausted);
            }
        }
    }

    #[test]
    fn step_preserves_invariants(cnf in arb_cnf(7, 20), seed in any::<u64>()) {
        let engine = Engine::new(&cnf);
        let mut s = engine.initial_state();
        let mut policy = RandomPolicy::new(seed);
        check_invariants(&engine, &s);
        for _ in 0..200 {
            if engine.is_goal(&s) { break; }
            let action = if s.conflict.is_some() || cnf.branchable(&s).is_empty() {
                Action::Backtrack
            } else {
                let (var, value) = policy.choose(&engine, &s).unwrap();
                Action::Branch { var, value }
            };
            let before = s.level;
            let r = engine.step(&mut s, action, Origin::Policy).unwrap();
            if r.outcome == Outcome::Failed { break; }
            if let Some(t) = r.backjump_to {
                prop_assert!(t < before);
            }
            check_invariants(&engine, &s);
        }
    }

    #[test]
    fn backjump_target_is_open_and_not_above_current(cnf in arb_cnf(7, 20), seed in any::<u64>()) {
        let engine = Engine::new(&cnf);
        let mut s = engine.initial_state();
        let mut policy = RandomPolicy::new(seed);
        for _ in 0..100 {
            if engine.is_goal(&s) { break; }
            if s.conflict.is_some() {
                match engine.backjump_target(&s) {
                    Some(t) => {
                        prop_assert!(t >= 1 && t <= s.level);
                        prop_assert!(engine.has_untried(&s, t));
                    }
                    None => {
                        prop_assert!((1..=s.level).all(|l| !engine.has_untried(&s, l)));
                        break;
                    }
                }
                engine.step(&mut s, Action::Backtrack, Origin::Policy).unwrap();
            } else {
                let (var, value) = policy.choose(&engine, &s).unwrap();
                engine.step(&mut s, Action::Branch { var, value }, Origin::Policy).unwrap();
            }
        }
    }
}

#[test]
fn top_k_sampler_is_seed_deterministic() {
    let mut r = rng::rng(3);
    let (cnf, _) = ssa_core::domains::gen::planted_3sat(12, 4.0, &mut r).unwrap();
    let run = |seed| {
        let mut agent = PolicyVerifier::new(TopKSampler::new(3, 1.0, seed), Reactive);
        run_search(&cnf, &mut agent, &RunConfig::default()).unwrap().events
    };
    assert_eq!(run(9), run(9));
}
