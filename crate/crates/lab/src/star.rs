//! Branching-factor sweep on star trees: a root with `k` leaf children, where
//! every return to the root asks whether all children have been visited.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ssa_core::codec::{tree_doc, write_doc, ActionDoc, Encoded, LossMask, ProblemDoc, Role, StateDoc, TreeFormat, Vocab, VocabSpec};
use ssa_core::domains::tree::Move;
use ssa_core::domains::Tree;
use ssa_core::mask::{MaskKind, PositionScheme};
use ssa_core::model::{train, Example, Model, ModelConfig, Schedule, Sequence, TrainConfig};
use ssa_core::rng::{child_rng, derive, tag};
use ssa_core::theory::{fit_rk, RkFit};

use crate::error::{LabError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StarConfig {
    pub ks: Vec<usize>,
    pub formats: Vec<TreeFormat>,
    pub train_trees: usize,
    pub test_trees: usize,
    /// Labels are drawn without replacement from `0..pool`.
    pub pool: u32,
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn: usize,
    pub mask: MaskKind,
    pub positions: PositionScheme,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// k whose accuracy calibrates the per-retrieval rate.
    pub anchor: usize,
    pub seed: u64,
}

impl Default for StarConfig {
    fn default() -> Self {
        Self {
            ks: vec![4, 8, 16],
            formats: vec![TreeFormat::Simple, TreeFormat::Verbose],
            train_trees: 2000,
            test_trees: 1000,
            pool: 40,
            layers: 2,
            dim: 32,
            heads: 2,
            ffn: 64,
            mask: MaskKind::Causal,
            positions: PositionScheme::BlockRelative,
            epochs: 8,
            lr: 3e-3,
            batch_size: 16,
            anchor: 4,
            seed: 0,
        }
    }
}

impl StarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.formats.is_empty() || self.train_trees == 0 || self.test_trees == 0 {
            return Err(LabError::Config("star sweep needs ks, formats, and trees".into()));
        }
        if let Some(&k) = self.ks.iter().find(|&&k| k == 0 || k as u32 + 1 > self.pool) {
            return Err(LabError::Config(format!("k={k} needs 1..pool-1 children")));
        }
        Ok(())
    }
}

/// Star trace whose problem listing sorts the children by label while the
/// traversal visits them in a random order.
pub fn star_trace(k: usize, pool: u32, format: TreeFormat, seed: u64, index: u64) -> Encoded {
    let tree = Tree::star(k).relabel(pool, &mut child_rng(seed, tag::TREES, index));
    let mut doc = tree_doc(&tree, format);
    let mut listed = tree.clone();
    let label = tree.label.clone();
    listed.children[0].sort_by_key(|&c| label[c as usize]);
    doc.problem = ProblemDoc::Tree(Tree::from_text(&listed.to_text()).expect("text form of a tree parses"));
    write_doc(&doc)
}

/// One verification query: the context up to the action slot and whether the
/// gold action is `UP`.
#[derive(Clone, Debug, PartialEq)]
pub struct RootQuery {
    pub block: usize,
    pub context: usize,
    pub all_visited: bool,
}

/// Root decisions of a star trace, in order.
pub fn root_queries(enc: &Encoded) -> Result<Vec<RootQuery>> {
    let doc = ssa_core::codec::decode(&enc.tokens).map_err(LabError::internal)?;
    let ProblemDoc::Tree(tree) = &doc.problem else {
        return Err(LabError::Internal("not a tree trace".into()));
    };
    let root = tree.label[0];
    let mut out = Vec::new();
    for (i, (b, span)) in doc.blocks.iter().zip(&enc.layout.blocks).enumerate() {
        let StateDoc::Tree { node, .. } = &b.state else { continue };
        if *node != root {
            continue;
        }
        let at = (span.start..span.end)
            .find(|&i| enc.roles[i] == Role::Action)
            .ok_or_else(|| LabError::Internal("block without an action token".into()))?;
        out.push(RootQuery { block: i, context: at, all_visited: b.action == ActionDoc::Move(Move::Up) });
    }
    Ok(out)
}

pub fn star_vocab(pool: u32) -> Vocab {
    Vocab::standard(VocabSpec { nodes: pool as usize, ..VocabSpec::default() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StarRow {
    pub format: TreeFormat,
    pub k: usize,
    pub test_trees: usize,
    pub final_loss: f64,
    /// Fraction of single root decisions answered correctly.
    pub decision_accuracy: f64,
    /// Fraction of trees with every root decision correct.
    pub all_correct: f64,
    /// `r^k` from the anchor point of the same format.
    pub predicted: Option<f64>,
}

/// Predicted-`UP` verdicts at each root decision of `enc`.
pub fn verify_roots(model: &Model<f32>, vocab: &Vocab, enc: &Encoded) -> Result<Vec<(bool, bool)>> {
    let ids = enc.ids(vocab).map_err(LabError::internal)?;
    let doc = ssa_core::codec::decode(&enc.tokens).map_err(LabError::internal)?;
    let ProblemDoc::Tree(tree) = &doc.problem else {
        return Err(LabError::Internal("not a tree trace".into()));
    };
    let up = vocab.id("UP").ok_or_else(|| LabError::Internal("vocabulary lacks UP".into()))?;
    let mut admissible: Vec<u32> = tree.children[0]
        .iter()
        .map(|&c| vocab.id(&format!("N{}", tree.label[c as usize])).ok_or_else(|| LabError::Internal("unknown label".into())))
        .collect::<Result<_>>()?;
    admissible.push(up);
    root_queries(enc)?
        .into_iter()
        .map(|q| {
            let mut layout = enc.layout.clone();
            layout.blocks.truncate(q.block + 1);
            let open = &mut layout.blocks[q.block];
            open.end = q.context;
            open.state_end = open.state_end.min(q.context);
            let seq = Sequence { tokens: &ids[..q.context], layout: &layout };
            let p = model.next_token_dist(&seq, Some(&admissible)).map_err(LabError::internal)?;
            Ok((p[up as usize] > 0.5, q.all_visited))
        })
        .collect()
}

fn train_cell(cfg: &StarConfig, k: usize, format: TreeFormat, vocab: &Vocab) -> Result<(Model<f32>, f64)> {
    let cell = derive(cfg.seed, k as u64, format as u64);
    let data = (0..cfg.train_trees)
        .map(|i| Example::from_encoded(&star_trace(k, cfg.pool, format, cell, i as u64), vocab, LossMask::ActionOnly))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(LabError::internal)?;
    let max_len = data.iter().map(|e| e.tokens.len()).max().unwrap_or(0);
    let mcfg = ModelConfig {
        layers: cfg.layers,
        dim: cfg.dim,
        heads: cfg.heads,
        ffn: cfg.ffn,
        vocab: vocab.len(),
        slots: 0,
        mask: cfg.mask,
        positions: cfg.positions,
        dropout: 0.0,
        max_pos: max_len + 1,
    };
    let mut model = Model::init(mcfg, derive(cell, tag::INIT, 0)).map_err(LabError::config)?;
    let tc = TrainConfig {
        lr: cfg.lr,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cell,
        schedule: Schedule::Linear,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &tc, &data, &mut |_, _| {}).map_err(LabError::internal)?;
    Ok((model, report.epoch_loss.last().copied().unwrap_or(f64::NAN)))
}

/// Measure one (k, format) cell on held-out trees.
pub fn run_cell(cfg: &StarConfig, k: usize, format: TreeFormat) -> Result<StarRow> {
    let vocab = star_vocab(cfg.pool);
    let (model, final_loss) = train_cell(cfg, k, format, &vocab)?;
    let test_seed = derive(cfg.seed, tag::EVAL, (k as u64) << 8 | format as u64);
    let verdicts = (0..cfg.test_trees)
        .into_par_iter()
        .map(|i| verify_roots(&model, &vocab, &star_trace(k, cfg.pool, format, test_seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let decisions: usize = verdicts.iter().map(Vec::len).sum();
    let right: usize = verdicts.iter().flatten().filter(|(p, y)| p == y).count();
    let all = verdicts.iter().filter(|v| v.iter().all(|(p, y)| p == y)).count();
    Ok(StarRow {
        format,
        k,
        test_trees: cfg.test_trees,
        final_loss,
        decision_accuracy: right as f64 / decisions.max(1) as f64,
        all_correct: all as f64 / cfg.test_trees as f64,
        predicted: None,
    })
}

/// Every cell of the sweep plus, per format, the `r^k` fit from the anchor.
pub fn star_sweep(cfg: &StarConfig) -> Result<(Vec<StarRow>, Vec<(TreeFormat, Option<RkFit>)>)> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &format in &cfg.formats {
        for &k in &cfg.ks {
            rows.push(run_cell(cfg, k, format)?);
        }
    }
    let mut fits = Vec::new();
    for &format in &cfg.formats {
        let pts: Vec<(u32, f64)> = rows.iter().filter(|r| r.format == format).map(|r| (r.k as u32, r.all_correct)).collect();
        let fit = fit_rk(&pts, cfg.anchor as u32).ok();
        if let Some(f) = &fit {
            for r in rows.iter_mut().filter(|r| r.format == format) {
                r.predicted = f.predicted.iter().find(|(k, _)| *k as usize == r.k).map(|&(_, p)| p);
            }
        }
        fits.push((format, fit));
    }
    Ok((rows, fits))
}
