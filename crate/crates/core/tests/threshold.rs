use proptest::prelude::*;
use ssa_core::domains::gen::planted_3sat;
use ssa_core::domains::sat::{Cnf, Lit};
use ssa_core::domains::Instance;
use ssa_core::rng;
use ssa_core::search::*;
use ssa_core::threshold::*;

fn planted(n: usize, count: usize, seed: u64) -> Vec<Instance> {
    (0..count)
        .map(|i| Instance::Sat(planted_3sat(n, 4.26, &mut rng::child_rng(seed, rng::tag::INSTANCES, i as u64)).unwrap().0))
        .collect()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn survival_bound_values() {
    assert_eq!(survival_lower_bound(0.0, 20.0), 1.0);
    assert!(close(survival_lower_bound(0.05, 20.0), 0.3585, 5e-5));
    let at_one_percent = survival_lower_bound(0.01, 20.0);
    assert!(close(at_one_percent, 0.818, 5e-4));
    // Zero-corruption row: observed solve 100% sits above the bound.
    assert!(at_one_percent <= 1.0);
}

#[test]
fn multi_path_reduces_to_single_path() {
    for a in [0.0, 0.03, 0.2, 0.7] {
        assert!(close(multi_path_model(a, 9.0, 1.0), survival_lower_bound(a, 9.0), 1e-15));
        assert!(multi_path_model(a, 9.0, 4.0) >= survival_lower_bound(a, 9.0));
    }
    assert_eq!(multi_path_model(0.0, 30.0, 0.5), 1.0);
}

#[test]
fn fit_recovers_synthetic_parameters() {
    let pts: Vec<(f64, f64)> = (0..=20).map(|i| i as f64 * 0.025).map(|a| (a, multi_path_model(a, 12.0, 3.0))).collect();
    let fit = fit_multipath(&pts).unwrap();
    assert!((fit.m_eff / 12.0 - 1.0).abs() < 0.1, "{fit:?}");
    assert!((fit.r_eff / 3.0 - 1.0).abs() < 0.1, "{fit:?}");
    assert!(fit.residuals.iter().all(|r| r.abs() < 1e-3));
    assert!(fit_multipath(&pts[..1]).is_err());
}

#[test]
fn critical_threshold_values() {
    assert_eq!(critical_threshold(1.0, 20).unwrap().exact, 0.0);
    let c = critical_threshold(0.5, 20).unwrap();
    assert!(close(c.exact, 0.03406, 5e-6));
    assert!(close(c.asymptotic, 0.03466, 5e-6));
    let width = critical_threshold(0.25, 20).unwrap().exact - c.exact;
    assert!(close(width, core::f64::consts::LN_2 / 20.0, 2.0 / 400.0));
    assert!(critical_threshold(0.0, 20).is_err());
    assert!(critical_threshold(0.5, 0).is_err());
}

#[test]
fn monte_carlo_matches_homogeneous_model() {
    for (i, a) in [0.0, 0.01, 0.03, 0.06, 0.1].into_iter().enumerate() {
        let p = monte_carlo_survival(a, 20, 10_000, 7 + i as u64, 3.0);
        assert!(p.covers_analytic(), "{p:?}");
    }
    let (lo, hi) = wilson_interval(50, 100, 1.96);
    assert!(close(lo, 0.4038, 1e-4) && close(hi, 0.5962, 1e-4));
    assert_eq!(wilson_interval(10_000, 10_000, 1.96).1, 1.0);
    assert_eq!(wilson_interval(0, 10_000, 1.96).0, 0.0);
    assert!(monte_carlo_survival(0.0, 20, 10_000, 1, 1.96).covers_analytic());
    assert_eq!(survival_crossing(&[(0.0, 1.0), (0.1, 0.6), (0.2, 0.2)], 0.5), Some(0.125));
}

fn viable_states(count: usize) -> Vec<(Instance, SearchState)> {
    let mut out = Vec::new();
    let mut r = rng::rng(5);
    let mut i = 0u64;
    while out.len() < count {
        let (cnf, sol) = planted_3sat(20, 4.26, &mut rng::child_rng(3, rng::tag::INSTANCES, i)).unwrap();
        i += 1;
        let inst = Instance::Sat(cnf);
        let engine = Engine::new(&inst);
        for _ in 0..100 {
            let trail: Vec<TrailEntry> = (0..20u32)
                .filter(|_| rand::Rng::gen_bool(&mut r, 0.5))
                .enumerate()
                .map(|(k, v)| TrailEntry { var: v, value: sol[v as usize], level: k as u32 + 1, forced: false, reason: None })
                .collect();
            out.push((inst.clone(), engine.state_from_trail(trail)));
        }
    }
    out
}

#[test]
fn corruption_flip_rates() {
    let states = viable_states(10_000);
    let run = |cfg: CorruptionConfig| {
        let mut o = corrupt_oracle(cfg).unwrap();
        let verdicts: Vec<Verdict> = states.iter().map(|(inst, s)| o.query(&Engine::new(inst), s)).collect();
        (verdicts, o.stats)
    };
    let (exact, stats) = run(CorruptionConfig::default());
    assert!(exact.iter().all(|v| *v == Verdict::Continue));
    assert_eq!(stats.viable, 10_000);
    let (zero, _) = run(CorruptionConfig { seed: 99, ..CorruptionConfig::default() });
    assert_eq!(zero, exact);
    let (all, _) = run(CorruptionConfig::fp(1.0, 1));
    assert!(all.iter().all(|v| *v == Verdict::Backtrack));
    let (_, tenth) = run(CorruptionConfig::fp(0.1, 4));
    assert!(close(tenth.alpha_v(), 0.1, 0.01), "{}", tenth.alpha_v());
    // Structured modes keep the configured long-run rate only for clustered.
    let (_, clustered) = run(CorruptionConfig { p_fp: 0.1, structure: CorruptionStructure::Clustered { mean_run: 4.0 }, ..CorruptionConfig::fp(0.0, 2) });
    assert!(close(clustered.alpha_v(), 0.1, 0.02), "{}", clustered.alpha_v());
    assert!(corrupt_oracle(CorruptionConfig::fp(1.5, 0)).is_err());
}

#[test]
fn corrupted_verdicts_are_deterministic_per_state() {
    let states = viable_states(200);
    let cfg = CorruptionConfig::fp(0.3, 11);
    let mut a = corrupt_oracle(cfg).unwrap();
    let mut b = corrupt_oracle(cfg).unwrap();
    for (inst, s) in states.iter().rev() {
        let e = Engine::new(inst);
        assert_eq!(a.query(&e, s), b.query(&e, s));
    }
}

#[test]
fn sweep_endpoints() {
    let inst = planted(20, 12, 40);
    let sc = SweepConfig::default();
    let fp = run_corruption_sweep(&inst, SweepSide::FalsePositive, &[0.0, 0.5], &[1, 2], &sc).unwrap();
    assert_eq!(fp.rows[0].solve_rate, 1.0);
    assert_eq!(fp.rows[0].alpha_v, 0.0);
    assert!(fp.rows[1].solve_rate <= 0.1, "{:?}", fp.rows[1]);
    assert!(fp.mean_branch_points > 0.0);
    let fnr = run_corruption_sweep(&inst, SweepSide::FalseNegative, &[0.5], &[1, 2], &sc).unwrap();
    assert_eq!(fnr.rows[0].solve_rate, 1.0);
    assert!(fnr.rows[0].recall < 1.0);
    assert!(fnr.rows[0].extra_backtracks >= 0.0);
}

fn arb_cnf(max_vars: usize, max_clauses: usize) -> impl Strategy<Value = Cnf> {
    (1..=max_vars).prop_flat_map(move |n| {
        let lit = (0..n as u32, any::<bool>()).prop_map(|(v, p)| if p { Lit::pos(v) } else { Lit::neg(v) });
        prop::collection::vec(prop::collection::vec(lit, 1..=3), 0..=max_clauses).prop_map(move |c| Cnf::new(n, c))
    })
}

fn brute_viable(cnf: &Cnf, a: &[Option<u8>]) -> bool {
    let n = cnf.num_vars;
    (0u32..1 << n).any(|m| {
        let full: Vec<Option<u8>> = (0..n).map(|v| Some(((m >> v) & 1) as u8)).collect();
        a.iter().zip(&full).all(|(x, y)| x.is_none() || x == y) && cnf.satisfied_by(&full)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]
    #[test]
    fn probe_is_sound_and_monotone(cnf in arb_cnf(7, 24), picks in prop::collection::vec((0u32..7, any::<bool>()), 0..4)) {
        let engine = Engine::new(&cnf);
        let mut s = engine.initial_state();
        for (v, b) in picks {
            let action = Action::Branch { var: v, value: b as u8 };
            if s.conflict.is_some() || engine.check(&s, action, Origin::Policy).is_err() {
                continue;
            }
            engine.step(&mut s, action, Origin::Policy).unwrap();
        }
        let verdicts: Vec<ProbeVerdict> = [0u64, 1, 2, 4, 8, 1000].iter().map(|&c| bounded_probe(&cnf, &s, c)).collect();
        if s.conflict.is_none() && brute_viable(&cnf, &s.assignment) {
            prop_assert!(verdicts.iter().all(|v| *v == ProbeVerdict::Unknown));
        }
        for w in verdicts.windows(2) {
            prop_assert!(!(w[0] == ProbeVerdict::Dead && w[1] == ProbeVerdict::Unknown));
        }
        if !brute_viable(&cnf, &s.assignment) || s.conflict.is_some() {
            prop_assert_eq!(verdicts[5], ProbeVerdict::Dead);
        }
    }
}

#[test]
fn probe_calls_exposed_conflict_dead_without_budget() {
    let cnf = Cnf::from_ints(2, &[&[1], &[-1]]);
    let engine = Engine::new(&cnf);
    let s = engine.initial_state();
    assert!(s.conflict.is_some());
    assert_eq!(bounded_probe(&cnf, &s, 0), ProbeVerdict::Dead);
}

#[test]
fn false_negative_overhead_is_bounded() {
    for (i, inst) in planted(8, 20, 77).iter().enumerate() {
        for p in [0.3, 1.0] {
            let o = fn_overhead(inst, p, i as u64).unwrap();
            assert!(o.solved);
            assert!(o.holds(), "instance {i} p {p}: {o:?}");
        }
    }
}
