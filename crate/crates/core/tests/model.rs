use proptest::prelude::*;
use rand::Rng as _;
use ssa_core::codec::{encode_trace, BlockSpan, Layout, LossMask, Span, TraceFormat, Vocab, VocabSpec};
use ssa_core::domains::gen::planted_3sat;
use ssa_core::domains::Instance;
use ssa_core::mask::{MaskKind, PositionScheme};
use ssa_core::model::*;
use ssa_core::rng;
use ssa_core::search::*;

fn small_cfg(vocab: usize, mask: MaskKind, positions: PositionScheme) -> ModelConfig {
    ModelConfig { layers: 2, dim: 16, heads: 2, ffn: 32, vocab, slots: 2, mask, positions, dropout: 0.0, max_pos: 256 }
}

fn layout_from(prefix: usize, blocks: &[usize]) -> Layout {
    let mut at = prefix;
    let blocks = blocks
        .iter()
        .map(|&l| {
            let b = BlockSpan { start: at, state_end: at + l / 2, end: at + l };
            at += l;
            b
        })
        .collect();
    Layout { prefix: Span { start: 0, end: prefix }, blocks }
}

fn sat_examples(n: usize, count: usize, seed: u64, vocab: &Vocab, loss: LossMask) -> Vec<Example> {
    (0..count)
        .map(|i| {
            let mut r = rng::child_rng(seed, rng::tag::INSTANCES, i as u64);
            let (cnf, _) = planted_3sat(n, 4.26, &mut r).unwrap();
            let inst = Instance::Sat(cnf);
            let mut agent = PolicyVerifier::new(OccurrenceDomain, Reactive);
            let run = run_search(&inst, &mut agent, &RunConfig::default()).unwrap();
            let enc = encode_trace(&inst, &run.events, TraceFormat::Enriched).unwrap();
            Example::from_encoded(&enc, vocab, loss).unwrap()
        })
        .collect()
}

fn sat_vocab(n: usize) -> Vocab {
    Vocab::standard(VocabSpec { vars: n, clauses: 64, levels: n, ..VocabSpec::default() })
}

#[test]
fn gradient_matches_finite_differences() {
    let vocab = sat_vocab(5);
    let ex = sat_examples(5, 1, 11, &vocab, LossMask::Blocks).pop().unwrap();
    for (mask, pos) in [
        (MaskKind::SsaSelective, PositionScheme::BlockRelative),
        (MaskKind::Causal, PositionScheme::Absolute),
        (MaskKind::ReverseSelective, PositionScheme::Absolute),
    ] {
        let model: Model<f64> = Model::init(small_cfg(vocab.len(), mask, pos), 5).unwrap();
        // Larger weights than the default init make every path matter.
        let mut model = model;
        let mut r = rng::rng(9);
        for p in model.params.iter_mut() {
            *p += r.gen_range(-0.3..0.3);
        }
        let targets: Vec<usize> = ex.targets.iter().copied().step_by(3).collect();
        let mut grad = vec![0.0; model.num_params()];
        model.loss_grad(&ex.seq(), &targets, 1.0, &mut grad, None).unwrap();
        let loss = |m: &Model<f64>| {
            let mut g = vec![0.0; m.num_params()];
            m.loss_grad(&ex.seq(), &targets, 1.0, &mut g, None).unwrap()
        };
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for (name, off, shape) in model.off.table.clone() {
            let len: usize = shape.iter().product();
            let mut idx: Vec<usize> = (0..len).filter(|&i| grad[off + i] != 0.0).collect();
            idx.sort_by_key(|&i| rng::mix64(i as u64));
            for &i in idx.iter().take(12) {
                let h = 1e-5;
                let mut plus = model.clone();
                plus.params[off + i] += h;
                let mut minus = model.clone();
                minus.params[off + i] -= h;
                let num = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let ana = grad[off + i];
                let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-4);
                assert!(rel < 1e-3, "{mask:?} {name}[{i}]: analytic {ana} numeric {num}");
                worst = worst.max(rel);
                checked += 1;
            }
        }
        assert!(checked > 150, "{checked}");
        assert!(worst < 1e-3);
    }
}

#[test]
fn zero_output_projection_gives_uniform_distribution() {
    let mut m: Model<f32> = Model::init(small_cfg(30, MaskKind::Causal, PositionScheme::Absolute), 1).unwrap();
    m.tensor_mut("out.w").unwrap().iter_mut().for_each(|w| *w = 0.0);
    let toks: Vec<u32> = (0..10).collect();
    let l = layout_from(10, &[]);
    let d = m.next_token_dist(&Sequence { tokens: &toks, layout: &l }, None).unwrap();
    assert!(d.iter().all(|&p| (p - 1.0 / 30.0).abs() < 1e-7));
}

#[test]
fn next_token_dist_normalizes() {
    let m: Model<f32> = Model::init(small_cfg(30, MaskKind::SsaSelective, PositionScheme::BlockRelative), 2).unwrap();
    let toks: Vec<u32> = (0..12).map(|i| (i * 7 % 30) as u32).collect();
    let l = layout_from(6, &[3, 3]);
    let seq = Sequence { tokens: &toks, layout: &l };
    let d = m.next_token_dist(&seq, None).unwrap();
    assert!((d.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    let one = m.next_token_dist(&seq, Some(&[4])).unwrap();
    assert_eq!(one[4], 1.0);
    let two = m.next_token_dist(&seq, Some(&[4, 9])).unwrap();
    assert!((two[4] + two[9] - 1.0).abs() < 1e-6);
    assert!((two[4] / two[9] - d[4] / d[9]).abs() < 1e-4 * (d[4] / d[9]));
}

#[test]
fn shape_and_position_errors() {
    let m: Model<f32> = Model::init(ModelConfig { max_pos: 8, ..small_cfg(10, MaskKind::Causal, PositionScheme::Absolute) }, 0).unwrap();
    let toks = vec![1u32; 7];
    let l = layout_from(7, &[]);
    assert!(matches!(m.forward(&Sequence { tokens: &toks, layout: &l }, &[0]), Err(ModelError::PositionOverflow { .. })));
    let bad = vec![11u32; 3];
    let l3 = layout_from(3, &[]);
    assert!(matches!(m.forward(&Sequence { tokens: &bad, layout: &l3 }, &[0]), Err(ModelError::ShapeMismatch(_))));
    assert!(Model::<f32>::init(ModelConfig { dim: 10, heads: 4, ..small_cfg(10, MaskKind::Causal, PositionScheme::Absolute) }, 0).is_err());
}

fn history_pair(r: &mut rng::Rng, vocab: u32) -> (Vec<u32>, Layout, Vec<u32>, Layout, usize) {
    let p = r.gen_range(1..8);
    let cur = r.gen_range(1..7);
    let prefix: Vec<u32> = (0..p).map(|_| r.gen_range(0..vocab)).collect();
    let block: Vec<u32> = (0..cur).map(|_| r.gen_range(0..vocab)).collect();
    let make = |r: &mut rng::Rng| {
        let hist: Vec<usize> = (0..r.gen_range(0..4)).map(|_| r.gen_range(1..6)).collect();
        let mut toks = prefix.clone();
        for &len in &hist {
            toks.extend((0..len).map(|_| r.gen_range(0..vocab)));
        }
        toks.extend(&block);
        let mut lens = hist;
        lens.push(cur);
        (toks, layout_from(p, &lens))
    };
    let (a, la) = make(r);
    let (b, lb) = make(r);
    (a, la, b, lb, cur)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn block_logits_ignore_history(seed in any::<u64>()) {
        let m: Model<f32> = Model::init(small_cfg(40, MaskKind::SsaSelective, PositionScheme::BlockRelative), seed).unwrap();
        let mut r = rng::rng(seed ^ 1);
        let (a, la, b, lb, cur) = history_pair(&mut r, 40);
        let at_a: Vec<usize> = (a.len() - cur..a.len()).collect();
        let at_b: Vec<usize> = (b.len() - cur..b.len()).collect();
        let xa = m.forward(&Sequence { tokens: &a, layout: &la }, &at_a).unwrap();
        let xb = m.forward(&Sequence { tokens: &b, layout: &lb }, &at_b).unwrap();
        prop_assert_eq!(xa, xb);
        let ha = m.hidden_states(&Sequence { tokens: &a, layout: &la }).unwrap();
        let hb = m.hidden_states(&Sequence { tokens: &b, layout: &lb }).unwrap();
        let d = m.cfg.dim;
        for (x, y) in ha.iter().zip(&hb) {
            prop_assert_eq!(&x[(a.len() - cur) * d..], &y[(b.len() - cur) * d..]);
        }
    }
}

#[test]
fn causal_logits_depend_on_history() {
    let mut differ = 0;
    for seed in 0..20u64 {
        let m: Model<f32> = Model::init(small_cfg(40, MaskKind::Causal, PositionScheme::Absolute), seed).unwrap();
        let mut r = rng::rng(seed ^ 1);
        let (a, la, b, lb, cur) = history_pair(&mut r, 40);
        if a == b {
            continue;
        }
        let xa = m.forward(&Sequence { tokens: &a, layout: &la }, &[a.len() - 1]).unwrap();
        let xb = m.forward(&Sequence { tokens: &b, layout: &lb }, &[b.len() - 1]).unwrap();
        let _ = cur;
        differ += (xa != xb) as usize;
    }
    assert!(differ >= 15, "{differ}");
}

#[test]
fn training_is_deterministic_and_zero_epochs_is_identity() {
    let vocab = sat_vocab(5);
    let data = sat_examples(5, 6, 3, &vocab, LossMask::ActionOnly);
    let cfg = small_cfg(vocab.len(), MaskKind::SsaSelective, PositionScheme::BlockRelative);
    let init: Model<f32> = Model::init(cfg, 4).unwrap();
    let mut m0 = init.clone();
    train(&mut m0, &TrainConfig { epochs: 0, ..TrainConfig::default() }, &data, &mut |_, _| {}).unwrap();
    assert_eq!(m0, init);
    let tc = TrainConfig { epochs: 2, lr: 1e-3, batch_size: 2, seed: 8, ..TrainConfig::default() };
    let (mut a, mut b) = (init.clone(), init.clone());
    let ra = train(&mut a, &tc, &data, &mut |_, _| {}).unwrap();
    let rb = train(&mut b, &tc, &data, &mut |_, _| {}).unwrap();
    assert_eq!(ra, rb);
    assert!(a.params.iter().zip(&b.params).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_ne!(a, init);
}

#[test]
fn memorizes_fifty_small_traces() {
    let vocab = sat_vocab(5);
    let data = sat_examples(5, 50, 21, &vocab, LossMask::ActionOnly);
    // Full history: after a backjump the state repeats while the action differs.
    let cfg = ModelConfig {
        layers: 2,
        dim: 64,
        heads: 4,
        ffn: 256,
        slots: 0,
        mask: MaskKind::Causal,
        positions: PositionScheme::Absolute,
        max_pos: 512,
        ..ModelConfig::desk(vocab.len())
    };
    let mut m: Model<f32> = Model::init(cfg, 1).unwrap();
    let tc = TrainConfig {
        epochs: 60,
        lr: 2e-3,
        batch_size: 4,
        seed: 1,
        weight_decay: 0.0,
        schedule: Schedule::Linear,
        ..TrainConfig::default()
    };
    let rep = train(&mut m, &tc, &data, &mut |_, _| {}).unwrap();
    let acc = accuracy(&m, &data).unwrap();
    assert!(rep.epoch_loss.last().unwrap() < &rep.epoch_loss[0]);
    assert!(acc >= 0.99, "accuracy {acc}, losses {:?}", rep.epoch_loss);
}
