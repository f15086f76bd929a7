//! Where does a model read its decisions from? History transplants, padding
//! with unrelated blocks, and a frozen bank of canonical states scored under
//! both protocols, with the usual calibration metrics.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::codec::{canonical_key, state_tokens, trace_doc, write_doc, BlockSpan, BlockTokens, CodecError, Encoded, Role, StateKey, TraceFormat, Vocab};
use crate::domains::Instance;
use crate::model::{Model, ModelError, Sequence};
use crate::protocol::var_token;
use crate::rng::{derive, tag};
use crate::search::{run_search, Action, DomainAdapter, PolicyVerifier, Reactive, RunConfig, SearchError, StepEvent, TopKSampler};

#[derive(Debug, thiserror::Error)]
pub enum DiagnosticsError {
    #[error("no transplant pairs found")]
    NoPairsFound,
    #[error("token {0:?} is not in the model vocabulary")]
    VocabularyMismatch(String),
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Search(#[from] SearchError),
}

/// Temperature-1 sampling over the heuristic's top three variables with
/// reactive verification. Rollout `i` uses its own seed stream.
pub fn stochastic_rollouts(inst: &Instance, count: usize, seed: u64, budget_tokens: u64) -> Result<Vec<Vec<StepEvent>>, SearchError> {
    (0..count)
        .map(|i| {
            let mut agent = PolicyVerifier::new(TopKSampler::new(3, 1.0, derive(seed, tag::ROLLOUT, i as u64)), Reactive);
            let rc = RunConfig { budget_tokens, ..RunConfig::default() };
            Ok(run_search(inst, &mut agent, &rc)?.events)
        })
        .collect()
}

/// A decision point in a rollout: the cumulative context up to and
/// including the current state field, plus what the model may emit there.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DecisionPoint {
    pub key: StateKey,
    pub conflict: bool,
    pub depth: u32,
    /// Prefix, earlier blocks, and the open state field.
    pub context: Encoded,
    /// Number of earlier blocks in `context`.
    pub history: usize,
    /// Variable tokens the model may branch on.
    pub admissible: Vec<String>,
    pub action: Action,
}

impl DecisionPoint {
    /// Prefix plus the open state field, no history.
    pub fn rebuilt(&self) -> Encoded {
        rebuild(&self.context)
    }

    fn history_text(&self) -> String {
        let open = self.context.layout.blocks.last().expect("open block");
        self.context.tokens[self.context.layout.prefix.end..open.start].join(" ")
    }
}

fn push_open(out: &mut Encoded, state: &[String]) {
    let start = out.tokens.len();
    out.tokens.extend_from_slice(state);
    out.roles.extend(core::iter::repeat(Role::State).take(state.len()));
    let end = out.tokens.len();
    out.layout.blocks.push(BlockSpan { start, state_end: end, end });
}

/// Every decision point of one rollout.
pub fn decision_points(inst: &Instance, events: &[StepEvent], format: TraceFormat) -> Result<Vec<DecisionPoint>, CodecError> {
    let full = write_doc(&trace_doc(inst, events, format, false)?);
    events
        .iter()
        .enumerate()
        .map(|(t, e)| {
            let mut context = Encoded::default();
            let end = if t == 0 { full.layout.prefix.end } else { full.layout.blocks[t - 1].end };
            context.tokens.extend_from_slice(&full.tokens[..end]);
            context.roles.extend_from_slice(&full.roles[..end]);
            context.layout.prefix = full.layout.prefix;
            context.layout.blocks.extend_from_slice(&full.layout.blocks[..t]);
            push_open(&mut context, &state_tokens(inst, &e.state, format)?);
            Ok(DecisionPoint {
                key: canonical_key(inst, &e.state, format)?,
                conflict: e.state.has_conflict(),
                depth: e.state.level,
                context,
                history: t,
                admissible: inst.branchable(&e.state).into_iter().map(|v| var_token(inst, v)).collect(),
                action: e.action,
            })
        })
        .collect()
}

/// The same canonical state reached by two different histories. The key
/// carries the state field, conflict flag, and decision depth, so all three
/// agree by construction.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransplantPair {
    pub instance: usize,
    pub a: DecisionPoint,
    pub b: DecisionPoint,
}

/// One pair per (instance, canonical key), taken from the first two
/// rollouts whose histories differ. Pairs come out in lexical key order.
pub fn build_transplant_pairs(
    instances: &[Instance],
    rollouts: &[Vec<Vec<StepEvent>>],
    format: TraceFormat,
) -> Result<Vec<TransplantPair>, DiagnosticsError> {
    if instances.len() != rollouts.len() {
        return Err(DiagnosticsError::InvalidInput("one rollout set per instance"));
    }
    let mut pairs = Vec::new();
    for (i, (inst, runs)) in instances.iter().zip(rollouts).enumerate() {
        let mut groups: BTreeMap<StateKey, Vec<(usize, DecisionPoint)>> = BTreeMap::new();
        for (r, events) in runs.iter().enumerate() {
            for p in decision_points(inst, events, format)? {
                groups.entry(p.key.clone()).or_default().push((r, p));
            }
        }
        for (_, group) in groups {
            let (ra, a) = &group[0];
            if let Some((_, b)) = group.iter().find(|(r, p)| r != ra && p.history_text() != a.history_text()) {
                pairs.push(TransplantPair { instance: i, a: a.clone(), b: b.clone() });
            }
        }
    }
    if pairs.is_empty() {
        return Err(DiagnosticsError::NoPairsFound);
    }
    Ok(pairs)
}

fn ids(vocab: &Vocab, toks: &[String]) -> Result<Vec<u32>, DiagnosticsError> {
    toks.iter().map(|t| vocab.id(t).ok_or_else(|| DiagnosticsError::VocabularyMismatch(t.clone()))).collect()
}

/// Next-token distribution at the end of `ctx`.
pub fn next_dist(model: &Model<f32>, vocab: &Vocab, ctx: &Encoded) -> Result<Vec<f32>, DiagnosticsError> {
    if vocab.len() != model.cfg.vocab {
        return Err(DiagnosticsError::VocabularyMismatch(String::from("<vocabulary size>")));
    }
    let toks = ids(vocab, &ctx.tokens)?;
    Ok(model.next_token_dist(&Sequence { tokens: &toks, layout: &ctx.layout }, None)?)
}

/// Symmetric KL divergence `KL(p||q) + KL(q||p)`. Terms where either side
/// is zero are skipped.
pub fn symmetric_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(&a, &b)| a * Float::ln(a / b) + b * Float::ln(b / a))
        .sum()
}

fn argmax<T: PartialOrd>(x: &[T]) -> usize {
    x.iter().enumerate().fold(0, |b, (i, v)| if *v > x[b] { i } else { b })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransplantMetrics {
    pub pairs: usize,
    /// Percent of pairs whose argmax next token agrees.
    pub agreement: f64,
    pub mean_kl: f64,
    pub max_kl: f64,
}

/// Compare the model's next-token distributions at the action position
/// under the two histories of each pair.
pub fn transplant_metrics(model: &Model<f32>, vocab: &Vocab, pairs: &[TransplantPair]) -> Result<TransplantMetrics, DiagnosticsError> {
    if pairs.is_empty() {
        return Err(DiagnosticsError::NoPairsFound);
    }
    let (mut agree, mut sum, mut max) = (0usize, 0.0f64, 0.0f64);
    for p in pairs {
        let da: Vec<f64> = next_dist(model, vocab, &p.a.context)?.iter().map(|&x| x as f64).collect();
        let db: Vec<f64> = next_dist(model, vocab, &p.b.context)?.iter().map(|&x| x as f64).collect();
        agree += (argmax(&da) == argmax(&db)) as usize;
        let kl = symmetric_kl(&da, &db);
        sum += kl;
        max = max.max(kl);
    }
    let n = pairs.len() as f64;
    Ok(TransplantMetrics { pairs: pairs.len(), agreement: 100.0 * agree as f64 / n, mean_kl: sum / n, max_kl: max })
}

/// `point.context` with `donors` inserted between the prefix and the first
/// block.
pub fn pad_with_donors(point: &DecisionPoint, donors: &[BlockTokens]) -> Encoded {
    let ctx = &point.context;
    let pre = ctx.layout.prefix.end;
    let mut out = Encoded::default();
    out.tokens.extend_from_slice(&ctx.tokens[..pre]);
    out.roles.extend_from_slice(&ctx.roles[..pre]);
    out.layout.prefix = ctx.layout.prefix;
    for d in donors {
        let start = out.tokens.len();
        out.tokens.extend_from_slice(&d.tokens);
        out.roles.extend_from_slice(&d.roles);
        out.layout.blocks.push(BlockSpan { start, state_end: start + d.state_len, end: out.tokens.len() });
    }
    let shift = out.tokens.len() - pre;
    out.tokens.extend_from_slice(&ctx.tokens[pre..]);
    out.roles.extend_from_slice(&ctx.roles[pre..]);
    out.layout.blocks.extend(ctx.layout.blocks.iter().map(|b| BlockSpan { start: b.start + shift, state_end: b.state_end + shift, end: b.end + shift }));
    out
}

/// Complete decision blocks of an encoded trace.
pub fn donor_blocks(trace: &Encoded) -> Vec<BlockTokens> {
    trace
        .layout
        .blocks
        .iter()
        .map(|b| BlockTokens { tokens: trace.tokens[b.start..b.end].to_vec(), roles: trace.roles[b.start..b.end].to_vec(), state_len: b.state_end - b.start })
        .collect()
}

/// Percent of trials whose admissible argmax survives the insertion of
/// donor blocks. Trial `i` pads `points[i]` with `donors[i]`.
pub fn padding_control(
    model: &Model<f32>,
    vocab: &Vocab,
    points: &[DecisionPoint],
    donors: &[Vec<BlockTokens>],
) -> Result<f64, DiagnosticsError> {
    if points.is_empty() || points.len() != donors.len() {
        return Err(DiagnosticsError::InvalidInput("one donor set per decision point"));
    }
    let mut agree = 0usize;
    for (p, d) in points.iter().zip(donors) {
        let mut cands = ids(vocab, &p.admissible)?;
        cands.push(vocab.id("CONFLICT").ok_or_else(|| DiagnosticsError::VocabularyMismatch(String::from("CONFLICT")))?);
        let base = next_dist(model, vocab, &p.context)?;
        let padded = next_dist(model, vocab, &pad_with_donors(p, d))?;
        let pick = |dist: &[f32]| argmax(&cands.iter().map(|&c| dist[c as usize]).collect::<Vec<_>>());
        agree += (pick(&base) == pick(&padded)) as usize;
    }
    Ok(100.0 * agree as f64 / points.len() as f64)
}

/// Conflict mass over conflict plus admissible continuation mass. With no
/// mass anywhere the verdict is backtrack.
pub fn p_backtrack(conflict: f64, continue_masses: &[f64]) -> f64 {
    let cont: f64 = continue_masses.iter().sum();
    if conflict + cont <= 0.0 {
        return 1.0;
    }
    conflict / (conflict + cont)
}

/// `p_backtrack` read off the model at the end of `ctx`.
pub fn model_p_backtrack(model: &Model<f32>, vocab: &Vocab, ctx: &Encoded, admissible: &[String]) -> Result<f64, DiagnosticsError> {
    let dist = next_dist(model, vocab, ctx)?;
    let conflict = vocab.id("CONFLICT").ok_or_else(|| DiagnosticsError::VocabularyMismatch(String::from("CONFLICT")))?;
    let cont: Vec<f64> = ids(vocab, admissible)?.iter().map(|&c| dist[c as usize] as f64).collect();
    Ok(p_backtrack(dist[conflict as usize] as f64, &cont))
}

/// A canonical state reached by at least two histories, labelled by
/// whether propagation exposed a contradiction.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbeEntry {
    pub instance: usize,
    pub key: StateKey,
    pub label: bool,
    pub admissible: Vec<String>,
    /// Cumulative contexts, one per distinct history.
    pub histories: Vec<Encoded>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProbeBank {
    pub entries: Vec<ProbeEntry>,
}

impl ProbeBank {
    /// Collect every canonical state that at least two distinct histories
    /// reach, in lexical key order within each instance.
    pub fn build(instances: &[Instance], rollouts: &[Vec<Vec<StepEvent>>], format: TraceFormat) -> Result<Self, DiagnosticsError> {
        if instances.len() != rollouts.len() {
            return Err(DiagnosticsError::InvalidInput("one rollout set per instance"));
        }
        let mut entries = Vec::new();
        for (i, (inst, runs)) in instances.iter().zip(rollouts).enumerate() {
            let mut groups: BTreeMap<StateKey, Vec<DecisionPoint>> = BTreeMap::new();
            for events in runs {
                for p in decision_points(inst, events, format)? {
                    let g = groups.entry(p.key.clone()).or_default();
                    if g.iter().all(|q| q.history_text() != p.history_text()) {
                        g.push(p);
                    }
                }
            }
            for (key, g) in groups.into_iter().filter(|(_, g)| g.len() >= 2) {
                entries.push(ProbeEntry {
                    instance: i,
                    key,
                    label: g[0].conflict,
                    admissible: g[0].admissible.clone(),
                    histories: g.into_iter().map(|p| p.context).collect(),
                });
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Labels aligned with `score`: one per (entry, history).
    pub fn labels(&self) -> Vec<bool> {
        self.entries.iter().flat_map(|e| e.histories.iter().map(move |_| e.label)).collect()
    }

    /// `p_backtrack` per (entry, history). Under `rebuilt` every history of
    /// an entry is replaced by the prefix and state field alone.
    pub fn score(&self, model: &Model<f32>, vocab: &Vocab, rebuilt: bool) -> Result<Vec<f64>, DiagnosticsError> {
        let mut out = Vec::new();
        for e in &self.entries {
            for h in &e.histories {
                let ctx = if rebuilt { rebuild(h) } else { h.clone() };
                out.push(model_p_backtrack(model, vocab, &ctx, &e.admissible)?);
            }
        }
        Ok(out)
    }
}

fn rebuild(ctx: &Encoded) -> Encoded {
    let open = ctx.layout.blocks.last().expect("open block");
    let mut out = Encoded::default();
    let pre = ctx.layout.prefix.end;
    out.tokens.extend_from_slice(&ctx.tokens[..pre]);
    out.roles.extend_from_slice(&ctx.roles[..pre]);
    out.layout.prefix = ctx.layout.prefix;
    push_open(&mut out, &ctx.tokens[open.start..open.end]);
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VerifierMetrics {
    pub n: usize,
    /// Fraction of positives.
    pub prevalence: f64,
    /// Backtrack rate on viable (label 0) states at threshold 0.5.
    pub alpha_v: f64,
    /// Continue rate on conflict (label 1) states at threshold 0.5.
    pub beta: f64,
    /// Absent when only one class is present.
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    pub ece: f64,
    pub brier: f64,
}

/// Threshold for the backtrack verdict.
pub const TAU: f64 = 0.5;

pub fn verifier_metrics(scores: &[f64], labels: &[bool], bins: usize) -> Result<VerifierMetrics, DiagnosticsError> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(DiagnosticsError::InvalidInput("scores and labels must be non-empty and aligned"));
    }
    if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(DiagnosticsError::InvalidInput("scores must lie in [0, 1]"));
    }
    if bins == 0 {
        return Err(DiagnosticsError::InvalidInput("at least one bin"));
    }
    let n = scores.len();
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = n - pos;
    let rate = |want: bool, pred: fn(f64) -> bool| {
        let total = labels.iter().filter(|&&y| y == want).count();
        if total == 0 {
            return 0.0;
        }
        scores.iter().zip(labels).filter(|(s, y)| **y == want && pred(**s)).count() as f64 / total as f64
    };
    let degenerate = pos == 0 || neg == 0;
    Ok(VerifierMetrics {
        n,
        prevalence: pos as f64 / n as f64,
        alpha_v: rate(false, |s| s > TAU),
        beta: rate(true, |s| s <= TAU),
        auroc: (!degenerate).then(|| auroc(scores, labels)),
        auprc: (!degenerate).then(|| auprc(scores, labels)),
        ece: ece(scores, labels, bins),
        brier: scores.iter().zip(labels).map(|(s, &y)| Float::powi(s - y as u8 as f64, 2)).sum::<f64>() / n as f64,
    })
}

/// Mann-Whitney statistic with tied scores sharing the average rank.
pub fn auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = alloc::vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    let pos = labels.iter().filter(|&&y| y).count() as f64;
    let neg = labels.len() as f64 - pos;
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &y)| y).map(|(r, _)| r).sum();
    (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

/// Average precision, stepping through distinct score thresholds from the
/// top so tied scores enter together.
pub fn auprc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let pos = labels.iter().filter(|&&y| y).count() as f64;
    let (mut tp, mut seen, mut prev_recall, mut ap) = (0.0, 0.0, 0.0, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            tp += labels[idx[j]] as u8 as f64;
            seen += 1.0;
            j += 1;
        }
        let recall = tp / pos;
        ap += (recall - prev_recall) * tp / seen;
        prev_recall = recall;
        i = j;
    }
    ap
}

/// Expected calibration error over equal-mass bins: sorted by score, then
/// index; the first `n % bins` bins take one extra item.
pub fn ece(scores: &[f64], labels: &[bool], bins: usize) -> f64 {
    let n = scores.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let bins = bins.min(n);
    let (base, extra) = (n / bins, n % bins);
    let mut at = 0;
    let mut total = 0.0;
    for b in 0..bins {
        let size = base + (b < extra) as usize;
        let chunk = &idx[at..at + size];
        at += size;
        let conf: f64 = chunk.iter().map(|&k| scores[k]).sum::<f64>() / size as f64;
        let acc: f64 = chunk.iter().map(|&k| labels[k] as u8 as f64).sum::<f64>() / size as f64;
        total += size as f64 / n as f64 * Float::abs(acc - conf);
    }
    total
}

/// AUROC under cumulative scoring minus AUROC under state rebuilding.
pub fn delta_auroc(cumulative: &VerifierMetrics, rebuilt: &VerifierMetrics) -> Option<f64> {
    Some(cumulative.auroc? - rebuilt.auroc?)
}
