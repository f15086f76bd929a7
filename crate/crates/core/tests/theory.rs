use ssa_core::domains::gen::planted_3sat;
use ssa_core::domains::Instance;
use ssa_core::rng;
use ssa_core::search::*;
use ssa_core::theory::*;

fn world(p_sh: Vec<Vec<f64>>, eta_s: Vec<f64>, phi: Vec<usize>, f: Vec<Vec<f64>>) -> DiscreteWorld {
    let num_t = phi.iter().max().unwrap() + 1;
    DiscreteWorld { p_sh, eta_s, phi, num_t, f }
}

#[test]
fn bayes_predictor_on_lossless_trace_leaves_only_irreducible_error() {
    let eta_s = vec![0.1, 0.6, 0.9];
    let mut w = world(vec![vec![0.2, 0.1], vec![0.3, 0.1], vec![0.25, 0.05]], eta_s.clone(), vec![0, 1, 2], vec![vec![0.0; 2]; 3]);
    w = w.with_trace_predictor(&w.eta_t());
    let d = decomposition_terms(&w).unwrap();
    assert!(d.aliasing.abs() < 1e-15 && d.approximation.abs() < 1e-15 && d.entanglement == 0.0);
    let irr: f64 = [0.3 * 0.1 * 0.9, 0.4 * 0.6 * 0.4, 0.3 * 0.9 * 0.1].iter().sum();
    assert!((d.total - irr).abs() < 1e-15);
    assert!((d.irreducible - irr).abs() < 1e-15);
}

#[test]
fn history_reading_predictor_under_constant_trace() {
    // One trace value, H uniform on {0, 1}, f = H.
    let w = world(vec![vec![0.25, 0.25], vec![0.25, 0.25]], vec![0.3, 0.7], vec![0, 0], vec![vec![0.0, 1.0]]);
    let d = decomposition_terms(&w).unwrap();
    assert!((d.entanglement - 0.25).abs() < 1e-15);
    let (ent, half) = transplant_identity(&w).unwrap();
    assert!((ent - 0.25).abs() < 1e-15 && (half - 0.25).abs() < 1e-15);
}

#[test]
fn trace_measurable_predictors_have_zero_entanglement() {
    for i in 0..100 {
        let w = seeded_world(1, i, i % 2 == 0);
        let g: Vec<f64> = (0..w.num_t).map(|t| (t as f64 + 0.5) / w.num_t as f64).collect();
        let w = w.with_trace_predictor(&g);
        let d = decomposition_terms(&w).unwrap();
        assert_eq!(d.entanglement, 0.0);
        assert_eq!(d.cross, 0.0);
        assert_eq!(transplant_identity(&w).unwrap(), (0.0, 0.0));
    }
}

#[test]
fn random_world_sweep() {
    for i in 0..100 {
        let w = seeded_world(7, i, true);
        assert!(w.history_relevance() < 1e-12);
        let d = decomposition_terms(&w).unwrap();
        assert!((d.total - d.sum_of_terms()).abs() <= 1e-10, "world {i}: {d:?}");
        assert!(d.cross.abs() < 1e-12);

        for w in [w, seeded_world(8, i, false)] {
            let d = decomposition_terms(&w).unwrap();
            assert!((d.total - d.sum_of_terms() - d.cross).abs() <= 1e-12);
            let (lhs, rhs) = transplant_identity(&w).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12);
            let (gap, bound) = pinsker_check(&w).unwrap();
            assert!(gap >= -1e-15 && gap <= bound + 1e-15, "world {i}: {gap} > {bound}");
            let (ll, mi) = logloss_identity(&w).unwrap();
            assert!((ll - mi).abs() <= 1e-12);
        }
    }
}

#[test]
fn general_worlds_carry_history_information() {
    let relevant = (0..50).filter(|&i| seeded_world(9, i, false).history_relevance() > 1e-3).count();
    assert!(relevant > 25);
}

#[test]
fn independence_gives_zero_gaps() {
    let w = world(vec![vec![0.3, 0.2], vec![0.3, 0.2]], vec![0.4, 0.4], vec![0, 1], vec![vec![0.5, 0.5]; 2]);
    assert_eq!(pinsker_check(&w).unwrap(), (0.0, 0.0));
    let (ll, mi) = logloss_identity(&w).unwrap();
    assert!(ll.abs() < 1e-15 && mi.abs() < 1e-15);
}

#[test]
fn informative_history() {
    // T is constant; H reveals the state, and the state fixes Y.
    let w = world(vec![vec![0.5, 0.0], vec![0.0, 0.5]], vec![0.0, 1.0], vec![0, 0], vec![vec![0.5, 0.5]]);
    let (gap, bound) = pinsker_check(&w).unwrap();
    assert!((gap - 0.5).abs() < 1e-15);
    let ln2 = std::f64::consts::LN_2;
    assert!((bound - (ln2 / 2.0).sqrt()).abs() < 1e-15 && bound >= gap);
    let (ll, mi) = logloss_identity(&w).unwrap();
    assert!((ll - ln2).abs() < 1e-15 && (mi - ln2).abs() < 1e-15);
}

#[test]
fn invalid_worlds_are_rejected() {
    let ok = world(vec![vec![0.5, 0.5]], vec![0.5], vec![0], vec![vec![0.5, 0.5]]);
    assert!(ok.validate().is_ok());
    let bad_mass = DiscreteWorld { p_sh: vec![vec![0.5, 0.4]], ..ok.clone() };
    let bad_phi = DiscreteWorld { phi: vec![1], ..ok.clone() };
    let bad_f = DiscreteWorld { f: vec![vec![1.5, 0.0]], ..ok.clone() };
    for w in [bad_mass, bad_phi, bad_f] {
        assert!(matches!(decomposition_terms(&w), Err(TheoryError::InvalidWorld(_))));
    }
}

#[test]
fn rk_model() {
    let fit = fit_rk(&[(4, 1.0), (8, 0.7)], 4).unwrap();
    assert_eq!(fit.r, 1.0);
    assert!(fit.predicted.iter().all(|p| p.1 == 1.0));
    let fit = fit_rk(&[(4, 0.96), (8, 0.5), (16, 0.1), (32, 0.0)], 4).unwrap();
    assert!((fit.r - 0.98985).abs() < 1e-5);
    assert!((fit.predicted[1].1 - 0.9216).abs() < 1e-12);
    assert!(fit.predicted.windows(2).all(|w| w[1].1 <= w[0].1));
    assert_eq!(fit_rk(&[(8, 0.5)], 4), Err(TheoryError::MissingAnchor));
    assert_eq!(fit_rk(&[(4, 0.0)], 4), Err(TheoryError::MissingAnchor));
}

fn synthetic(n: usize, seed: u64, label: impl Fn(f64, f64) -> bool, history_constant: bool) -> Vec<ProbeSample> {
    use rand::Rng as _;
    let mut r = rng::rng(seed);
    (0..n)
        .map(|_| {
            let t: f64 = r.gen_range(-1.0..1.0);
            let h: f64 = if history_constant { 0.3 } else { r.gen_range(-1.0..1.0) };
            ProbeSample { trace: vec![t, r.gen_range(-1.0..1.0)], history: vec![h], label: label(t, h) }
        })
        .collect()
}

#[test]
fn probe_lift_tracks_where_the_label_lives() {
    let cfg = ProbeConfig { max_iters: 3000, ..ProbeConfig::default() };
    let constant = history_irrelevance_probe(&synthetic(300, 1, |t, _| t > 0.1, true), &cfg).unwrap();
    assert_eq!(constant.mean_lift, 0.0);
    let from_t = history_irrelevance_probe(&synthetic(300, 2, |t, _| t > 0.1, false), &cfg).unwrap();
    assert!(from_t.mean_lift.abs() < 0.03, "{from_t:?}");
    let from_h = history_irrelevance_probe(&synthetic(300, 3, |_, h| h > 0.0, false), &cfg).unwrap();
    assert!(from_h.mean_lift > 0.3, "{from_h:?}");
    assert_eq!(from_h.trace_only.len(), 5);
}

#[test]
fn probe_rejects_degenerate_inputs() {
    let cfg = ProbeConfig::default();
    assert!(matches!(history_irrelevance_probe(&[], &cfg), Err(TheoryError::DegenerateFeatures(_))));
    let one_class = synthetic(20, 1, |_, _| true, false);
    assert!(matches!(history_irrelevance_probe(&one_class, &cfg), Err(TheoryError::DegenerateFeatures(_))));
    let mut ragged = synthetic(20, 1, |t, _| t > 0.0, false);
    ragged[3].history.push(1.0);
    assert!(matches!(history_irrelevance_probe(&ragged, &cfg), Err(TheoryError::DegenerateFeatures(_))));
}

#[test]
fn search_trace_probe_features() {
    let mut samples = Vec::new();
    for i in 0..40u64 {
        let (cnf, _) = planted_3sat(10, 4.0, &mut rng::child_rng(3, rng::tag::INSTANCES, i)).unwrap();
        let inst = Instance::Sat(cnf.clone());
        let mut agent = PolicyVerifier::new(TopKSampler::new(3, 1.0, i), Reactive);
        let run = run_search(&inst, &mut agent, &RunConfig::default()).unwrap();
        let s = history_probe_samples(&cnf, &run.events, 3);
        assert_eq!(s.len(), run.events.len());
        assert_eq!(s[0].history[..2], [0.0, 0.0]);
        samples.extend(s);
    }
    let r = history_irrelevance_probe(&samples, &ProbeConfig { max_iters: 2000, ..ProbeConfig::default() }).unwrap();
    // The verdict is a function of the conflict flag, which the trace carries.
    assert!(r.trace_only.iter().all(|&a| a == 1.0), "{r:?}");
    assert!(r.mean_lift.abs() < 0.02);
}
