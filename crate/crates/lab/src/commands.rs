//! One function per command. Each reads its upstream artifacts from the run
//! directory, writes its outputs there, and reports what it read and wrote so
//! the caller can record the manifest entry.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ssa_core::codec::{Encoded, LossMask, TraceFormat, TreeFormat, Vocab, VocabSpec};
use ssa_core::diagnostics::{
    build_transplant_pairs, decision_points, delta_auroc, donor_blocks, padding_control, stochastic_rollouts, transplant_metrics,
    verifier_metrics, ProbeBank,
};
use ssa_core::domains::gen::{gnp, num_clauses, planted_3sat, random_3sat};
use ssa_core::domains::{Coloring, Instance, Tree};
use ssa_core::mask::{MaskKind, PositionScheme};
use ssa_core::model::{accuracy, train, Example, Model, ModelConfig, Schedule, TrainConfig};
use ssa_core::protocol::{reference_trace, run_episode, Protocol, PolicySource, ProtocolConfig, SolveMetrics, VerifierSource};
use ssa_core::rng::{child_rng, derive, tag};
use ssa_core::search::HeuristicKind;
use ssa_core::theory::{decomposition_terms, logloss_identity, pinsker_check, seeded_world, transplant_identity};
use ssa_core::threshold::{monte_carlo_survival, run_corruption_sweep, survival_lower_bound, CorruptionStructure, SweepConfig, SweepSide};

use crate::error::{LabError, Result};
use crate::io;
use crate::run::RunDir;
use crate::star::{star_sweep, StarConfig};

/// What a command touched, for the manifest.
#[derive(Clone, Debug, Default)]
pub struct Done {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seeds: Vec<u64>,
    /// Main metric table, echoed to stdout.
    pub summary: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    #[default]
    SatPlanted,
    SatRandom,
    Coloring,
    StarTree,
    RandomTree,
}

/// Planted 3-SAT instances; instance `i` draws from its own stream.
pub fn planted_instances(n: usize, ratio: f64, count: usize, seed: u64) -> Result<Vec<Instance>> {
    (0..count)
        .map(|i| {
            planted_3sat(n, ratio, &mut child_rng(seed, tag::INSTANCES, i as u64)).map(|(c, _)| Instance::Sat(c)).map_err(LabError::config)
        })
        .collect()
}

/// Standard vocabulary for SAT traces over `n` variables at `ratio`.
pub fn sat_vocab(n: usize, ratio: f64) -> Vocab {
    Vocab::standard(VocabSpec { vars: n, clauses: num_clauses(n, ratio), levels: n, ..VocabSpec::default() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub domain: Domain,
    pub n: usize,
    pub ratio: f64,
    pub colors: usize,
    pub edge_p: f64,
    /// Children per internal node for trees.
    pub k: usize,
    pub pool: u32,
    pub format: TraceFormat,
    pub tree_format: TreeFormat,
    pub count: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            domain: Domain::SatPlanted,
            n: 10,
            ratio: 4.0,
            colors: 3,
            edge_p: 0.3,
            k: 4,
            pool: 64,
            format: TraceFormat::Enriched,
            tree_format: TreeFormat::Simple,
            count: 500,
            seed: 42,
        }
    }
}

#[derive(Serialize)]
struct TreeEvents<'a> {
    tree: &'a Tree,
}

#[derive(Serialize)]
struct SearchEvents<'a> {
    instance: &'a Instance,
    events: &'a [ssa_core::search::StepEvent],
}

#[derive(Serialize)]
struct GenRow {
    index: usize,
    tokens: usize,
    blocks: usize,
}

fn gen_one(cfg: &GenConfig, i: usize) -> Result<(Encoded, serde_json::Value)> {
    let mut r = child_rng(cfg.seed, tag::INSTANCES, i as u64);
    let search = |inst: Instance| -> Result<(Encoded, serde_json::Value)> {
        let (run, enc) = reference_trace(&inst, cfg.format).map_err(LabError::config)?;
        let ev = serde_json::to_value(SearchEvents { instance: &inst, events: &run.events }).map_err(LabError::internal)?;
        Ok((enc, ev))
    };
    let tree = |t: Tree| -> Result<(Encoded, serde_json::Value)> {
        let enc = ssa_core::codec::write_doc(&ssa_core::codec::tree_doc(&t, cfg.tree_format));
        Ok((enc, serde_json::to_value(TreeEvents { tree: &t }).map_err(LabError::internal)?))
    };
    match cfg.domain {
        Domain::SatPlanted => search(Instance::Sat(planted_3sat(cfg.n, cfg.ratio, &mut r).map_err(LabError::config)?.0)),
        Domain::SatRandom => search(Instance::Sat(random_3sat(cfg.n, cfg.ratio, &mut r, 1000).map_err(LabError::config)?)),
        Domain::Coloring => search(Instance::Coloring(Coloring::new(gnp(cfg.n, cfg.edge_p, &mut r), cfg.colors))),
        Domain::StarTree => tree(Tree::star(cfg.k).relabel(cfg.pool, &mut r)),
        Domain::RandomTree => tree(Tree::random(cfg.n, &[cfg.k], &mut r).relabel(cfg.pool, &mut r)),
    }
}

fn gen_vocab(cfg: &GenConfig) -> Vocab {
    match cfg.domain {
        Domain::SatPlanted | Domain::SatRandom => sat_vocab(cfg.n, cfg.ratio),
        Domain::Coloring => Vocab::standard(VocabSpec { nodes: cfg.n, colors: cfg.colors, levels: cfg.n, ..VocabSpec::default() }),
        Domain::StarTree | Domain::RandomTree => Vocab::standard(VocabSpec { nodes: cfg.pool as usize, ..VocabSpec::default() }),
    }
}

pub fn gen_traces(run: &RunDir, cfg: &GenConfig) -> Result<Done> {
    let tree_nodes = match cfg.domain {
        Domain::StarTree => cfg.k + 1,
        Domain::RandomTree => cfg.n,
        _ => 0,
    };
    if tree_nodes > cfg.pool as usize || (matches!(cfg.domain, Domain::RandomTree) && (cfg.n == 0 || cfg.k == 0)) {
        return Err(LabError::Config("tree needs 1..=pool nodes and k >= 1".into()));
    }
    if matches!(cfg.domain, Domain::SatPlanted | Domain::SatRandom) && cfg.n < 3 {
        return Err(LabError::Config("3-SAT needs n >= 3".into()));
    }
    if matches!(cfg.domain, Domain::Coloring) && (cfg.colors == 0 || cfg.colors > 8 || !(0.0..=1.0).contains(&cfg.edge_p)) {
        return Err(LabError::Config("coloring needs 1..=8 colors and edge_p in [0, 1]".into()));
    }
    let dir = run.traces();
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| LabError::io(&dir, e))?;
    }
    run.ensure(&dir)?;
    let traces = (0..cfg.count).into_par_iter().map(|i| gen_one(cfg, i)).collect::<Result<Vec<_>>>()?;
    let mut vocab = gen_vocab(cfg);
    let mut outputs = Vec::new();
    let mut rows = Vec::new();
    for (i, (enc, events)) in traces.iter().enumerate() {
        for t in &enc.tokens {
            vocab.register(t);
        }
        outputs.extend(io::write_trace(&dir, i, enc, events)?);
        rows.push(GenRow { index: i, tokens: enc.len(), blocks: enc.layout.blocks.len() });
    }
    outputs.push(io::write_json(&io::vocab_path(&dir), &vocab)?);
    let summary = io::write_csv(&run.metrics().join("traces.csv"), &rows)?;
    outputs.push(summary.clone());
    Ok(Done { inputs: vec![], outputs, seeds: vec![cfg.seed], summary: Some(summary) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCmdConfig {
    /// Checkpoint name under `checkpoints/`.
    pub name: String,
    pub layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn: usize,
    pub slots: usize,
    pub mask: MaskKind,
    pub positions: PositionScheme,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub clip: f64,
    pub schedule: Schedule,
    pub loss_mask: LossMask,
    pub seed: u64,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        let d = ModelConfig::desk(1);
        Self {
            name: "model".into(),
            layers: d.layers,
            dim: d.dim,
            heads: d.heads,
            ffn: d.ffn,
            slots: d.slots,
            mask: d.mask,
            positions: d.positions,
            epochs: 10,
            lr: 1e-3,
            weight_decay: 0.01,
            batch_size: 8,
            clip: 1.0,
            schedule: Schedule::Linear,
            loss_mask: LossMask::ActionOnly,
            seed: 0,
        }
    }
}

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    loss: f64,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    name: &'a str,
    examples: usize,
    params: usize,
    final_loss: f64,
    accuracy: f64,
}

fn checkpoint_path(run: &RunDir, name: &str) -> PathBuf {
    run.checkpoints().join(format!("{name}.ckpt"))
}

/// Train a model on every trace under `traces/` and checkpoint it.
pub fn train_cmd(run: &RunDir, cfg: &TrainCmdConfig) -> Result<Done> {
    if cfg.name.is_empty() || cfg.name.contains(['/', '\\']) {
        return Err(LabError::Config("checkpoint name must be a plain file stem".into()));
    }
    let dir = run.traces();
    let (vocab, traces) = io::read_traces(&dir)?;
    if traces.is_empty() {
        return Err(LabError::Missing(format!("no traces under {}", dir.display())));
    }
    let data = traces
        .iter()
        .map(|t| Example::from_encoded(t, &vocab, cfg.loss_mask))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(LabError::internal)?;
    let longest = data.iter().map(|e| e.tokens.len()).max().unwrap_or(0);
    let mcfg = ModelConfig {
        layers: cfg.layers,
        dim: cfg.dim,
        heads: cfg.heads,
        ffn: cfg.ffn,
        vocab: vocab.len(),
        slots: cfg.slots,
        mask: cfg.mask,
        positions: cfg.positions,
        dropout: 0.0,
        // Headroom for evaluation episodes that run longer than any trace.
        max_pos: (4 * longest).max(512) + cfg.slots,
    };
    let mut model = Model::init(mcfg, derive(cfg.seed, tag::INIT, 0)).map_err(LabError::config)?;
    let tc = TrainConfig {
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: cfg.seed,
        clip: cfg.clip,
        loss_mask: cfg.loss_mask,
        schedule: cfg.schedule,
    };
    let report = train(&mut model, &tc, &data, &mut |_, _| {}).map_err(LabError::internal)?;
    let acc = accuracy(&model, &data).map_err(LabError::internal)?;
    let mut outputs = vec![io::save_checkpoint(&checkpoint_path(run, &cfg.name), &model)?];
    let epochs: Vec<EpochRow> = report.epoch_loss.iter().enumerate().map(|(epoch, &loss)| EpochRow { epoch, loss }).collect();
    outputs.push(io::write_csv(&run.metrics().join(format!("train_{}.csv", cfg.name)), &epochs)?);
    let summary = io::write_csv(
        &run.metrics().join(format!("train_{}_summary.csv", cfg.name)),
        &[TrainSummary {
            name: &cfg.name,
            examples: data.len(),
            params: model.num_params(),
            final_loss: report.epoch_loss.last().copied().unwrap_or(f64::NAN),
            accuracy: acc,
        }],
    )?;
    outputs.push(summary.clone());
    let mut inputs = io::trace_files(&dir)?;
    inputs.push(io::vocab_path(&dir));
    Ok(Done { inputs, outputs, seeds: vec![cfg.seed], summary: Some(summary) })
}

fn load_model(run: &RunDir, name: &str) -> Result<(Model<f32>, PathBuf)> {
    let p = checkpoint_path(run, name);
    Ok((io::load_checkpoint(&p)?, p))
}

/// Checkpoints plus the vocabulary they were trained with.
fn load_models(run: &RunDir, names: &[String]) -> Result<(Vocab, Vec<(String, Model<f32>)>, Vec<PathBuf>)> {
    if names.is_empty() {
        return Err(LabError::Config("no checkpoints named".into()));
    }
    let vocab_path = io::vocab_path(&run.traces());
    let vocab = io::read_vocab(&run.traces())?;
    let mut inputs = vec![vocab_path];
    let mut models = Vec::new();
    for n in names {
        let (m, p) = load_model(run, n)?;
        if m.cfg.vocab != vocab.len() {
            return Err(LabError::Config(format!("checkpoint {n} has vocabulary {} but traces have {}", m.cfg.vocab, vocab.len())));
        }
        inputs.push(p);
        models.push((n.clone(), m));
    }
    Ok((vocab, models, inputs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub checkpoints: Vec<String>,
    pub n: usize,
    pub ratio: f64,
    pub instances: usize,
    pub budget_tokens: u64,
    pub policy: PolicySource,
    pub verifier: VerifierSource,
    pub protocols: Vec<Protocol>,
    pub format: TraceFormat,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            checkpoints: vec!["model".into()],
            n: 10,
            ratio: 4.0,
            instances: 100,
            budget_tokens: 100,
            policy: PolicySource::Model,
            verifier: VerifierSource::Model,
            protocols: vec![Protocol::Cumulative, Protocol::StateRebuilt],
            format: TraceFormat::Enriched,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub checkpoint: String,
    pub protocol: Protocol,
    pub budget_tokens: u64,
    pub instances: usize,
    pub solve_rate: f64,
    pub timeout_rate: f64,
    pub false_unsat_rate: f64,
    pub exhausted_rate: f64,
    pub mean_decisions: f64,
    pub mean_backtracks: f64,
    pub repeat_rate: f64,
    pub false_prunes: u64,
    pub missed_conflicts: u64,
}

/// Solve metrics for one model under one protocol, episodes in parallel.
pub fn evaluate_parallel(model: &Model<f32>, vocab: &Vocab, instances: &[Instance], pc: &ProtocolConfig) -> Result<SolveMetrics> {
    if instances.is_empty() {
        return Err(LabError::Config("no instances to evaluate".into()));
    }
    let eps = instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let pc = ProtocolConfig { seed: derive(pc.seed, tag::EVAL, i as u64), ..*pc };
            run_episode(Some(model), vocab, inst, &pc).map_err(LabError::internal)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SolveMetrics::from_episodes(&eps))
}

pub fn eval_cmd(run: &RunDir, cfg: &EvalConfig) -> Result<Done> {
    let (vocab, models, inputs) = load_models(run, &cfg.checkpoints)?;
    let instances = planted_instances(cfg.n, cfg.ratio, cfg.instances, cfg.seed)?;
    let mut rows = Vec::new();
    for (name, model) in &models {
        for &protocol in &cfg.protocols {
            let pc = ProtocolConfig {
                protocol,
                budget_tokens: cfg.budget_tokens,
                policy: cfg.policy,
                verifier: cfg.verifier,
                format: cfg.format,
                seed: cfg.seed,
            };
            let m = evaluate_parallel(model, &vocab, &instances, &pc)?;
            rows.push(EvalRow {
                checkpoint: name.clone(),
                protocol,
                budget_tokens: cfg.budget_tokens,
                instances: m.instances,
                solve_rate: m.solve_rate,
                timeout_rate: m.timeout_rate,
                false_unsat_rate: m.false_unsat_rate,
                exhausted_rate: m.exhausted_rate,
                mean_decisions: m.mean_decisions,
                mean_backtracks: m.mean_backtracks,
                repeat_rate: m.repeat_rate,
                false_prunes: m.false_prunes,
                missed_conflicts: m.missed_conflicts,
            });
        }
    }
    let summary = io::write_csv(&run.metrics().join("eval.csv"), &rows)?;
    Ok(Done { inputs, outputs: vec![summary.clone()], seeds: vec![cfg.seed], summary: Some(summary) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransplantConfig {
    pub checkpoints: Vec<String>,
    pub n: usize,
    pub ratio: f64,
    pub instances: usize,
    pub rollouts: usize,
    pub rollout_budget: u64,
    /// Instances whose reference traces supply padding trials.
    pub padding_instances: usize,
    pub donors: usize,
    pub format: TraceFormat,
    pub seed: u64,
}

impl Default for TransplantConfig {
    fn default() -> Self {
        Self {
            checkpoints: vec!["model".into()],
            n: 10,
            ratio: 4.0,
            instances: 20,
            rollouts: 12,
            rollout_budget: 4096,
            padding_instances: 50,
            donors: 3,
            format: TraceFormat::Enriched,
            seed: 11,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransplantRow {
    pub checkpoint: String,
    pub pairs: usize,
    pub agreement: f64,
    pub mean_kl: f64,
    pub max_kl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PaddingRow {
    pub checkpoint: String,
    pub trials: usize,
    pub donors: usize,
    /// Percent of trials whose admissible argmax is unchanged.
    pub unchanged: f64,
}

/// Stochastic rollouts for each instance, in parallel.
pub fn rollouts(instances: &[Instance], count: usize, seed: u64, budget: u64) -> Result<Vec<Vec<Vec<ssa_core::search::StepEvent>>>> {
    instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| stochastic_rollouts(inst, count, derive(seed, tag::ROLLOUT, i as u64), budget).map_err(LabError::internal))
        .collect()
}

/// Decision points from reference traces, each with `donors` blocks drawn
/// from the reference traces of a disjoint instance pool.
pub fn padding_fixture(
    n: usize,
    ratio: f64,
    count: usize,
    donors: usize,
    format: TraceFormat,
    seed: u64,
) -> Result<(Vec<ssa_core::diagnostics::DecisionPoint>, Vec<Vec<ssa_core::codec::BlockTokens>>)> {
    let insts = planted_instances(n, ratio, count, seed)?;
    let pool = planted_instances(n, ratio, count.max(10), derive(seed, tag::DONORS, 0))?;
    let donor_pool: Vec<_> = pool
        .iter()
        .map(|d| reference_trace(d, format).map(|(_, enc)| donor_blocks(&enc)).map_err(LabError::internal))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    if donor_pool.is_empty() {
        return Err(LabError::Internal("donor pool is empty".into()));
    }
    let mut points = Vec::new();
    let mut chosen = Vec::new();
    for inst in &insts {
        let (run, _) = reference_trace(inst, format).map_err(LabError::internal)?;
        for p in decision_points(inst, &run.events, format).map_err(LabError::internal)? {
            let j = points.len() as u64;
            chosen.push(
                (0..donors as u64)
                    .map(|d| donor_pool[(derive(seed, tag::DONORS, j * 64 + d + 1) % donor_pool.len() as u64) as usize].clone())
                    .collect(),
            );
            points.push(p);
        }
    }
    Ok((points, chosen))
}

pub fn transplant_cmd(run: &RunDir, cfg: &TransplantConfig) -> Result<Done> {
    let (vocab, models, inputs) = load_models(run, &cfg.checkpoints)?;
    let instances = planted_instances(cfg.n, cfg.ratio, cfg.instances, cfg.seed)?;
    let rolls = rollouts(&instances, cfg.rollouts, cfg.seed, cfg.rollout_budget)?;
    let pairs = build_transplant_pairs(&instances, &rolls, cfg.format).map_err(|e| LabError::Internal(e.to_string()))?;
    let (points, donors) = padding_fixture(cfg.n, cfg.ratio, cfg.padding_instances, cfg.donors, cfg.format, derive(cfg.seed, tag::DONORS, 1))?;
    let mut trows = Vec::new();
    let mut prows = Vec::new();
    for (name, model) in &models {
        let m = transplant_metrics(model, &vocab, &pairs).map_err(LabError::internal)?;
        trows.push(TransplantRow { checkpoint: name.clone(), pairs: m.pairs, agreement: m.agreement, mean_kl: m.mean_kl, max_kl: m.max_kl });
        let unchanged = padding_control(model, &vocab, &points, &donors).map_err(LabError::internal)?;
        prows.push(PaddingRow { checkpoint: name.clone(), trials: points.len(), donors: cfg.donors, unchanged });
    }
    let summary = io::write_csv(&run.metrics().join("transplant.csv"), &trows)?;
    let padding = io::write_csv(&run.metrics().join("padding.csv"), &prows)?;
    Ok(Done { inputs, outputs: vec![summary.clone(), padding], seeds: vec![cfg.seed], summary: Some(summary) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeBenchConfig {
    pub checkpoints: Vec<String>,
    pub n: usize,
    pub ratio: f64,
    pub instances: usize,
    pub rollouts: usize,
    pub rollout_budget: u64,
    pub bins: usize,
    pub format: TraceFormat,
    pub seed: u64,
}

impl Default for ProbeBenchConfig {
    fn default() -> Self {
        Self {
            checkpoints: vec!["model".into()],
            n: 10,
            ratio: 4.0,
            instances: 20,
            rollouts: 12,
            rollout_budget: 4096,
            bins: 15,
            format: TraceFormat::Enriched,
            seed: 13,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub checkpoint: String,
    pub protocol: Protocol,
    pub entries: usize,
    pub samples: usize,
    pub prevalence: f64,
    pub alpha_v: f64,
    pub beta: f64,
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub ece: f64,
    pub brier: f64,
    /// Cumulative minus state-rebuilt AUROC, on both rows of a checkpoint.
    pub delta_auroc: Option<f64>,
    /// Whether the two protocols produced identical score vectors.
    pub scores_equal: bool,
}

/// The frozen probe bank for a configuration; independent of any model.
pub fn probe_bank(n: usize, ratio: f64, instances: usize, count: usize, budget: u64, format: TraceFormat, seed: u64) -> Result<ProbeBank> {
    let insts = planted_instances(n, ratio, instances, seed)?;
    let rolls = rollouts(&insts, count, seed, budget)?;
    ProbeBank::build(&insts, &rolls, format).map_err(LabError::internal)
}

pub fn probe_bench_cmd(run: &RunDir, cfg: &ProbeBenchConfig) -> Result<Done> {
    let (vocab, models, inputs) = load_models(run, &cfg.checkpoints)?;
    let bank = probe_bank(cfg.n, cfg.ratio, cfg.instances, cfg.rollouts, cfg.rollout_budget, cfg.format, cfg.seed)?;
    if bank.is_empty() {
        return Err(LabError::Internal("probe bank is empty; raise instances or rollouts".into()));
    }
    let labels = bank.labels();
    let mut rows = Vec::new();
    for (name, model) in &models {
        let cum = bank.score(model, &vocab, false).map_err(LabError::internal)?;
        let sr = bank.score(model, &vocab, true).map_err(LabError::internal)?;
        let a = verifier_metrics(&cum, &labels, cfg.bins).map_err(LabError::internal)?;
        let b = verifier_metrics(&sr, &labels, cfg.bins).map_err(LabError::internal)?;
        let delta = delta_auroc(&a, &b);
        for (protocol, m) in [(Protocol::Cumulative, a), (Protocol::StateRebuilt, b)] {
            rows.push(ProbeRow {
                checkpoint: name.clone(),
                protocol,
                entries: bank.len(),
                samples: m.n,
                prevalence: m.prevalence,
                alpha_v: m.alpha_v,
                beta: m.beta,
                auroc: m.auroc,
                auprc: m.auprc,
                ece: m.ece,
                brier: m.brier,
                delta_auroc: delta,
                scores_equal: cum == sr,
            });
        }
    }
    let summary = io::write_csv(&run.metrics().join("probe_bench.csv"), &rows)?;
    Ok(Done { inputs, outputs: vec![summary.clone()], seeds: vec![cfg.seed], summary: Some(summary) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionCmdConfig {
    pub n: usize,
    pub ratio: f64,
    pub instances: usize,
    pub seeds: Vec<u64>,
    pub fp_grid: Vec<f64>,
    pub fn_grid: Vec<f64>,
    pub structure: CorruptionStructure,
    pub policy: HeuristicKind,
    pub chronological: bool,
    pub mc_m: u32,
    pub mc_trials: u64,
    pub mc_grid: Vec<f64>,
    pub seed: u64,
}

impl Default for CorruptionCmdConfig {
    fn default() -> Self {
        Self {
            n: 20,
            ratio: 4.0,
            instances: 100,
            seeds: vec![1, 2, 3],
            fp_grid: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            fn_grid: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            structure: CorruptionStructure::Iid,
            policy: HeuristicKind::OccurrenceDomain,
            chronological: false,
            mc_m: 20,
            mc_trials: 10_000,
            mc_grid: (0..=20).map(|i| i as f64 * 0.005).collect(),
            seed: 17,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionRow {
    pub side: SweepSide,
    pub rate: f64,
    pub runs: usize,
    pub solve_rate: f64,
    pub alpha_v: f64,
    pub precision: f64,
    pub recall: f64,
    pub mean_backtracks: f64,
    pub extra_backtracks: f64,
    /// `(1 - alpha_v)^M` with M the mean solution-path query count.
    pub bound: f64,
    pub path_queries: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub alpha: f64,
    pub m: u32,
    pub trials: u64,
    pub survival: f64,
    pub lo: f64,
    pub hi: f64,
    pub analytic: f64,
    pub covered: bool,
}

/// FP and FN corruption sweeps over planted instances.
pub fn corruption_rows(cfg: &CorruptionCmdConfig) -> Result<Vec<CorruptionRow>> {
    let instances = planted_instances(cfg.n, cfg.ratio, cfg.instances, cfg.seed)?;
    let sc = SweepConfig { policy: cfg.policy, structure: cfg.structure, chronological: cfg.chronological, ..SweepConfig::default() };
    let mut rows = Vec::new();
    for (side, grid) in [(SweepSide::FalsePositive, &cfg.fp_grid), (SweepSide::FalseNegative, &cfg.fn_grid)] {
        if grid.is_empty() {
            continue;
        }
        // Grid points are independent; run them in parallel.
        let reports = grid
            .par_iter()
            .map(|&rate| run_corruption_sweep(&instances, side, &[rate], &cfg.seeds, &sc).map_err(LabError::config))
            .collect::<Result<Vec<_>>>()?;
        for rep in reports {
            let m = rep.mean_branch_points;
            for r in rep.rows {
                rows.push(CorruptionRow {
                    side,
                    rate: r.rate,
                    runs: r.runs,
                    solve_rate: r.solve_rate,
                    alpha_v: r.alpha_v,
                    precision: r.precision,
                    recall: r.recall,
                    mean_backtracks: r.mean_backtracks,
                    extra_backtracks: r.extra_backtracks,
                    bound: survival_lower_bound(r.alpha_v, m),
                    path_queries: m,
                });
            }
        }
    }
    Ok(rows)
}

pub fn monte_carlo_rows(cfg: &CorruptionCmdConfig) -> Vec<McRow> {
    cfg.mc_grid
        .par_iter()
        .enumerate()
        .map(|(i, &a)| {
            let p = monte_carlo_survival(a, cfg.mc_m, cfg.mc_trials, derive(cfg.seed, tag::MONTE_CARLO, i as u64), 1.96);
            McRow {
                alpha: a,
                m: cfg.mc_m,
                trials: cfg.mc_trials,
                survival: p.survival,
                lo: p.lo,
                hi: p.hi,
                analytic: p.analytic,
                covered: p.covers_analytic(),
            }
        })
        .collect()
}

pub fn corruption_cmd(run: &RunDir, cfg: &CorruptionCmdConfig) -> Result<Done> {
    if cfg.seeds.is_empty() || cfg.instances == 0 {
        return Err(LabError::Config("corruption sweep needs seeds and instances".into()));
    }
    let rows = corruption_rows(cfg)?;
    let summary = io::write_csv(&run.metrics().join("corruption.csv"), &rows)?;
    let mc = io::write_csv(&run.metrics().join("threshold_mc.csv"), &monte_carlo_rows(cfg))?;
    let mut seeds = cfg.seeds.clone();
    seeds.push(cfg.seed);
    Ok(Done { inputs: vec![], outputs: vec![summary.clone(), mc], seeds, summary: Some(summary) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub worlds: u64,
    pub seed: u64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self { worlds: 100, seed: 7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub check: String,
    pub worlds: u64,
    pub max_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Identity and bound checks over seeded worlds, one row per check.
pub fn theory_rows(cfg: &TheoryConfig) -> Result<Vec<TheoryRow>> {
    let mut err = [0.0f64; 6];
    let bad = |e: ssa_core::theory::TheoryError| LabError::Internal(e.to_string());
    for i in 0..cfg.worlds {
        let premise = seeded_world(cfg.seed, i, true);
        let d = decomposition_terms(&premise).map_err(bad)?;
        err[0] = err[0].max((d.total - d.sum_of_terms()).abs());
        let g: Vec<f64> = (0..premise.num_t).map(|t| (t as f64 + 0.5) / premise.num_t as f64).collect();
        let measurable = decomposition_terms(&premise.with_trace_predictor(&g)).map_err(bad)?;
        err[1] = err[1].max(measurable.entanglement.abs());
        for w in [premise, seeded_world(derive(cfg.seed, tag::WORLDS, 1), i, false)] {
            let d = decomposition_terms(&w).map_err(bad)?;
            err[2] = err[2].max((d.total - d.sum_of_terms() - d.cross).abs());
            let (lhs, rhs) = transplant_identity(&w).map_err(bad)?;
            err[3] = err[3].max((lhs - rhs).abs());
            let (gap, bound) = pinsker_check(&w).map_err(bad)?;
            err[4] = err[4].max(gap - bound).max(-gap);
            let (ll, mi) = logloss_identity(&w).map_err(bad)?;
            err[5] = err[5].max((ll - mi).abs());
        }
    }
    let checks = [
        ("decomposition-sum-under-premise", 1e-10),
        ("trace-measurable-entanglement", 0.0),
        ("decomposition-with-cross-term", 1e-12),
        ("transplant-identity", 1e-12),
        ("information-bound-violation", 1e-12),
        ("logloss-gap-identity", 1e-12),
    ];
    Ok(checks
        .iter()
        .zip(err)
        .map(|(&(check, tolerance), e)| TheoryRow {
            check: check.into(),
            worlds: cfg.worlds,
            max_error: e.max(0.0),
            tolerance,
            pass: e <= tolerance,
        })
        .collect())
}

pub fn theory_cmd(run: &RunDir, cfg: &TheoryConfig) -> Result<Done> {
    if cfg.worlds == 0 {
        return Err(LabError::Config("theory checks need at least one world".into()));
    }
    let rows = theory_rows(cfg)?;
    let summary = io::write_csv(&run.metrics().join("theory.csv"), &rows)?;
    let failed: Vec<&str> = rows.iter().filter(|r| !r.pass).map(|r| r.check.as_str()).collect();
    if !failed.is_empty() {
        return Err(LabError::Internal(format!("theory checks failed: {}", failed.join(", "))));
    }
    Ok(Done { inputs: vec![], outputs: vec![summary.clone()], seeds: vec![cfg.seed], summary: Some(summary) })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub format: TreeFormat,
    pub anchor: usize,
    pub r: Option<f64>,
}

pub fn star_sweep_cmd(run: &RunDir, cfg: &StarConfig) -> Result<Done> {
    let (rows, fits) = star_sweep(cfg)?;
    let summary = io::write_csv(&run.metrics().join("star_sweep.csv"), &rows)?;
    let fit_rows: Vec<FitRow> = fits.into_iter().map(|(format, f)| FitRow { format, anchor: cfg.anchor, r: f.map(|f| f.r) }).collect();
    let fit = io::write_csv(&run.metrics().join("star_fit.csv"), &fit_rows)?;
    Ok(Done { inputs: vec![], outputs: vec![summary.clone(), fit], seeds: vec![cfg.seed], summary: Some(summary) })
}
