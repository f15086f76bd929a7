use proptest::prelude::*;
use rand::Rng as _;
use rand::seq::SliceRandom;
use ssa_core::codec::{TraceFormat, Vocab, VocabSpec};
use ssa_core::diagnostics::*;
use ssa_core::domains::gen::planted_3sat;
use ssa_core::domains::sat::{Cnf, TRUE};
use ssa_core::domains::Instance;
use ssa_core::mask::{MaskKind, PositionScheme};
use ssa_core::model::{Model, ModelConfig};
use ssa_core::protocol::reference_trace;
use ssa_core::rng;
use ssa_core::search::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn symmetric_kl_closed_form() {
    let v = symmetric_kl(&[0.5, 0.5], &[0.9, 0.1]);
    let want = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln() + 0.9 * (0.9f64 / 0.5).ln() + 0.1 * (0.1f64 / 0.5).ln();
    assert!(close(v, want, 1e-15));
    assert!(close(v, 0.8788898, 1e-7));
    assert_eq!(symmetric_kl(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
}

#[test]
fn p_backtrack_cases() {
    assert!(close(p_backtrack(0.2, &[0.35, 0.25]), 0.25, 1e-15));
    assert_eq!(p_backtrack(0.0, &[0.4]), 0.0);
    assert_eq!(p_backtrack(0.0, &[]), 1.0);
    assert_eq!(p_backtrack(0.3, &[]), 1.0);
}

#[test]
fn calibration_fixture() {
    let m = verifier_metrics(&[0.2, 0.2, 0.8, 0.8], &[false, true, true, true], 2).unwrap();
    assert!(close(m.ece, 0.25, 1e-12));
    // (0.04 + 0.64 + 0.04 + 0.04) / 4
    assert!(close(m.brier, 0.19, 1e-12));
    assert!(close(m.prevalence, 0.75, 1e-12));
    assert_eq!(m.alpha_v, 0.0);
    assert!(close(m.beta, 1.0 / 3.0, 1e-12));
    // Positive 0.2 ties the negative; the two 0.8s beat it.
    assert!(close(m.auroc.unwrap(), (0.5 + 1.0 + 1.0) / 3.0, 1e-12));
}

#[test]
fn perfect_scores() {
    let labels = [true, false, false, true, false];
    let scores: Vec<f64> = labels.iter().map(|&y| y as u8 as f64).collect();
    let m = verifier_metrics(&scores, &labels, 15).unwrap();
    assert_eq!((m.auroc, m.auprc, m.ece, m.brier, m.alpha_v, m.beta), (Some(1.0), Some(1.0), 0.0, 0.0, 0.0, 0.0));
}

#[test]
fn average_precision_by_hand() {
    // Hits at ranks 1 and 3: (1 + 2/3) / 2.
    let ap = auprc(&[0.9, 0.8, 0.7, 0.6], &[true, false, true, false]);
    assert!(close(ap, 5.0 / 6.0, 1e-12));
    // A tie at the top enters as one threshold: precision 1/2 at recall 1.
    assert!(close(auprc(&[0.5, 0.5], &[true, false]), 0.5, 1e-12));
}

#[test]
fn degenerate_and_invalid_inputs() {
    let m = verifier_metrics(&[0.1, 0.9], &[true, true], 15).unwrap();
    assert_eq!((m.auroc, m.auprc), (None, None));
    assert!(delta_auroc(&m, &m).is_none());
    assert!(verifier_metrics(&[], &[], 15).is_err());
    assert!(verifier_metrics(&[1.5], &[true], 15).is_err());
    assert!(verifier_metrics(&[0.5], &[true, false], 15).is_err());
}

proptest! {
    #[test]
    fn auroc_matches_pairwise_count(data in prop::collection::vec((0u8..6, any::<bool>()), 2..200)) {
        let scores: Vec<f64> = data.iter().map(|&(s, _)| s as f64 / 5.0).collect();
        let labels: Vec<bool> = data.iter().map(|&(_, y)| y).collect();
        let pos: Vec<f64> = scores.iter().zip(&labels).filter(|(_, y)| **y).map(|(s, _)| *s).collect();
        let neg: Vec<f64> = scores.iter().zip(&labels).filter(|(_, y)| !**y).map(|(s, _)| *s).collect();
        prop_assume!(!pos.is_empty() && !neg.is_empty());
        let mut wins = 0.0;
        for p in &pos {
            for n in &neg {
                wins += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
            }
        }
        let brute = wins / (pos.len() * neg.len()) as f64;
        prop_assert!(close(auroc(&scores, &labels), brute, 1e-12));
    }

    #[test]
    fn metrics_stay_in_unit_interval(data in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..100), bins in 1usize..20) {
        let scores: Vec<f64> = data.iter().map(|d| d.0).collect();
        let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
        let m = verifier_metrics(&scores, &labels, bins).unwrap();
        for x in [m.alpha_v, m.beta, m.ece, m.brier, m.prevalence, m.auroc.unwrap_or(0.5), m.auprc.unwrap_or(0.5)] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }
}

#[test]
fn base_rate_predictor_is_calibrated_on_shuffled_labels() {
    let mut r = rng::rng(4);
    let mut labels: Vec<bool> = (0..3000).map(|_| r.gen::<f64>() < 0.3).collect();
    let base = labels.iter().filter(|&&y| y).count() as f64 / labels.len() as f64;
    let scores = vec![base; labels.len()];
    let mut total = 0.0;
    for _ in 0..20 {
        labels.shuffle(&mut r);
        total += verifier_metrics(&scores, &labels, 15).unwrap().ece;
    }
    // Per-bin sampling noise is about sqrt(0.21 / 200) ~ 0.03.
    assert!(total / 20.0 < 0.04, "{}", total / 20.0);
}

/// Branches through a fixed list of moves.
struct Script(Vec<(Var, Val)>, usize);

impl Policy<Instance> for Script {
    fn choose(&mut self, _: &Engine<Instance>, _: &SearchState) -> Option<(Var, Val)> {
        self.1 += 1;
        self.0.get(self.1 - 1).copied()
    }
}

fn scripted(inst: &Instance, moves: &[(Var, Val)]) -> Vec<StepEvent> {
    let mut agent = PolicyVerifier::new(Script(moves.to_vec(), 0), Reactive);
    run_search(inst, &mut agent, &RunConfig::default()).unwrap().events
}

#[test]
fn two_orders_converging_give_one_pair() {
    let inst = Instance::Sat(Cnf::from_ints(4, &[&[1, 2, 3], &[3, 4, -1], &[-3, -4, 2]]));
    let a = scripted(&inst, &[(0, TRUE), (1, TRUE), (2, TRUE)]);
    let b = scripted(&inst, &[(1, TRUE), (0, TRUE), (2, TRUE)]);
    let pairs = build_transplant_pairs(std::slice::from_ref(&inst), &[vec![a.clone(), b]], TraceFormat::Enriched).unwrap();
    assert_eq!(pairs.len(), 1);
    let p = &pairs[0];
    assert_eq!(p.a.key, p.b.key);
    assert_eq!((p.a.depth, p.a.conflict), (2, false));
    let open = |d: &DecisionPoint| {
        let s = *d.context.layout.blocks.last().unwrap();
        d.context.tokens[s.start..s.end].to_vec()
    };
    assert_eq!(open(&p.a), open(&p.b));
    assert_ne!(p.a.context.tokens, p.b.context.tokens);
    assert!(matches!(
        build_transplant_pairs(std::slice::from_ref(&inst), &[vec![a]], TraceFormat::Enriched),
        Err(DiagnosticsError::NoPairsFound)
    ));
}

fn planted(n: usize, count: usize, seed: u64) -> Vec<Instance> {
    (0..count)
        .map(|i| Instance::Sat(planted_3sat(n, 4.0, &mut rng::child_rng(seed, rng::tag::INSTANCES, i as u64)).unwrap().0))
        .collect()
}

fn vocab(n: usize) -> Vocab {
    Vocab::standard(VocabSpec { vars: n, clauses: 5 * n, levels: n, ..VocabSpec::default() })
}

fn model(v: &Vocab, mask: MaskKind, positions: PositionScheme, seed: u64) -> Model<f32> {
    let cfg = ModelConfig { layers: 2, dim: 16, heads: 2, ffn: 32, vocab: v.len(), slots: 2, mask, positions, dropout: 0.0, max_pos: 4096 };
    let mut m = Model::init(cfg, seed).unwrap();
    m.params.iter_mut().for_each(|p| *p *= 8.0);
    m
}

fn bank_fixture() -> (Vec<Instance>, Vec<Vec<Vec<StepEvent>>>) {
    let insts = planted(8, 6, 21);
    let rollouts = insts.iter().enumerate().map(|(i, inst)| stochastic_rollouts(inst, 12, i as u64, 4096).unwrap()).collect();
    (insts, rollouts)
}

#[test]
fn ssa_transplants_agree_exactly() {
    let (insts, rollouts) = bank_fixture();
    let pairs = build_transplant_pairs(&insts, &rollouts, TraceFormat::Enriched).unwrap();
    assert!(pairs.len() >= 5, "{}", pairs.len());
    let v = vocab(8);
    for seed in 0..2 {
        let ssa = model(&v, MaskKind::SsaSelective, PositionScheme::BlockRelative, seed);
        let m = transplant_metrics(&ssa, &v, &pairs).unwrap();
        assert_eq!(m.agreement, 100.0);
        assert_eq!(m.max_kl, 0.0);
        // Same history on both sides is trivially identical for any model.
        let causal = model(&v, MaskKind::Causal, PositionScheme::Absolute, seed);
        let same: Vec<_> = pairs.iter().map(|p| TransplantPair { b: p.a.clone(), ..p.clone() }).collect();
        assert_eq!(transplant_metrics(&causal, &v, &same).unwrap().max_kl, 0.0);
    }
}

#[test]
fn vocabulary_mismatch_is_reported() {
    let (insts, rollouts) = bank_fixture();
    let pairs = build_transplant_pairs(&insts, &rollouts, TraceFormat::Enriched).unwrap();
    let small = vocab(3);
    let m = model(&small, MaskKind::SsaSelective, PositionScheme::BlockRelative, 0);
    assert!(matches!(transplant_metrics(&m, &small, &pairs), Err(DiagnosticsError::VocabularyMismatch(_))));
}

fn padding_fixture(count: usize) -> (Vec<DecisionPoint>, Vec<Vec<ssa_core::codec::BlockTokens>>) {
    let insts = planted(8, count, 31);
    let donor_pool = planted(8, 40, 32);
    let donor_blocks: Vec<_> = donor_pool.iter().flat_map(|d| donor_blocks(&reference_trace(d, TraceFormat::Enriched).unwrap().1)).collect();
    let mut r = rng::child_rng(0, rng::tag::DONORS, 0);
    let mut points = Vec::new();
    let mut donors = Vec::new();
    for inst in &insts {
        let (run, _) = reference_trace(inst, TraceFormat::Enriched).unwrap();
        for p in decision_points(inst, &run.events, TraceFormat::Enriched).unwrap().into_iter().take(2) {
            points.push(p);
            donors.push((0..3).map(|_| donor_blocks[r.gen_range(0..donor_blocks.len())].clone()).collect());
        }
    }
    (points, donors)
}

#[test]
fn padding_is_invisible_to_ssa() {
    let (points, donors) = padding_fixture(20);
    let v = vocab(8);
    let ssa = model(&v, MaskKind::SsaSelective, PositionScheme::BlockRelative, 3);
    assert_eq!(padding_control(&ssa, &v, &points, &donors).unwrap(), 100.0);
    let causal = model(&v, MaskKind::Causal, PositionScheme::Absolute, 3);
    let none = vec![Vec::new(); points.len()];
    assert_eq!(padding_control(&causal, &v, &points, &none).unwrap(), 100.0);
    assert!(padding_control(&causal, &v, &points, &donors).unwrap() < 100.0);
}

#[test]
fn padded_context_keeps_the_state_block() {
    let (points, donors) = padding_fixture(2);
    let padded = pad_with_donors(&points[1], &donors[1]);
    assert_eq!(padded.layout.blocks.len(), points[1].context.layout.blocks.len() + 3);
    let a = *points[1].context.layout.blocks.last().unwrap();
    let b = *padded.layout.blocks.last().unwrap();
    assert_eq!(points[1].context.tokens[a.start..a.end], padded.tokens[b.start..b.end]);
    assert_eq!(padded.layout, ssa_core::codec::parse_layout(&padded.tokens).unwrap());
}

#[test]
fn probe_bank_scores_match_across_protocols_for_ssa() {
    let (insts, rollouts) = bank_fixture();
    let bank = ProbeBank::build(&insts, &rollouts, TraceFormat::Enriched).unwrap();
    assert_eq!(bank, ProbeBank::build(&insts, &rollouts, TraceFormat::Enriched).unwrap());
    assert!(!bank.is_empty());
    assert!(bank.entries.iter().all(|e| e.histories.len() >= 2));
    assert!(bank.entries.iter().any(|e| e.label) && bank.entries.iter().any(|e| !e.label));
    for e in &bank.entries {
        assert_eq!(e.label, e.key.text.contains("CONFLICT"));
    }
    let v = vocab(8);
    let ssa = model(&v, MaskKind::SsaSelective, PositionScheme::BlockRelative, 5);
    let cum = bank.score(&ssa, &v, false).unwrap();
    let sr = bank.score(&ssa, &v, true).unwrap();
    assert_eq!(cum, sr);
    let labels = bank.labels();
    let (a, b) = (verifier_metrics(&cum, &labels, 15).unwrap(), verifier_metrics(&sr, &labels, 15).unwrap());
    assert_eq!(delta_auroc(&a, &b), Some(0.0));
    let causal = model(&v, MaskKind::Causal, PositionScheme::Absolute, 5);
    assert_ne!(bank.score(&causal, &v, false).unwrap(), bank.score(&causal, &v, true).unwrap());
}
