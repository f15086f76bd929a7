//! False-prune threshold lab: noisy viability oracles, survival models,
//! critical rates, and a bounded dead-end probe.

use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng as _;

use crate::domains::oracle::viable;
use crate::domains::Instance;
use crate::rng::{child_rng, derive, fnv1a, tag, unit_from_hash, Rng};
use crate::search::{
    heuristic, ranked_candidates, run_search, Action, DomainAdapter, Engine, HeuristicKind, OccurrenceDomain, Origin,
    PolicyVerifier, RunConfig, SearchError, SearchState, Val, Verdict, Verifier,
};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ThresholdError {
    #[error("invalid parameters: {0}")]
    InvalidParams(&'static str),
    #[error("fit diverged (sse {sse})")]
    FitDiverged { sse: f64, residuals: Vec<f64> },
    #[error(transparent)]
    Search(#[from] SearchError),
}

/// How flip probabilities vary across queries.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case", tag = "kind"))]
pub enum CorruptionStructure {
    #[default]
    Iid,
    /// Rate scaled by `2 / (1 + exp(-slope * (depth - midpoint)))`.
    DepthDependent { midpoint: f64, slope: f64 },
    /// Rate scaled by twice the fraction of tight open constraints.
    ConfidenceDependent,
    /// Flips arrive in runs of geometric length with the given mean; the
    /// long-run flip fraction stays at the configured rate.
    Clustered { mean_run: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CorruptionConfig {
    /// Probability of calling a viable state dead.
    pub p_fp: f64,
    /// Probability of calling a dead state viable.
    pub p_fn: f64,
    pub structure: CorruptionStructure,
    pub seed: u64,
}

impl CorruptionConfig {
    pub fn fp(p: f64, seed: u64) -> Self {
        Self { p_fp: p, seed, ..Self::default() }
    }

    pub fn fn_only(p: f64, seed: u64) -> Self {
        Self { p_fn: p, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ThresholdError> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !unit(self.p_fp) || !unit(self.p_fn) {
            return Err(ThresholdError::InvalidParams("flip probabilities must lie in [0, 1]"));
        }
        match self.structure {
            CorruptionStructure::DepthDependent { midpoint, slope } if !(midpoint.is_finite() && slope.is_finite()) => {
                Err(ThresholdError::InvalidParams("depth shape must be finite"))
            }
            CorruptionStructure::Clustered { mean_run } if !(mean_run >= 1.0) => {
                Err(ThresholdError::InvalidParams("mean run length must be at least 1"))
            }
            _ => Ok(()),
        }
    }
}

/// Confusion counts over verifier queries. Positive means "dead".
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QueryStats {
    pub viable: u64,
    pub dead: u64,
    pub false_prunes: u64,
    pub missed_dead: u64,
    /// Queries the exact oracle could not settle within its node limit;
    /// counted as viable.
    pub unresolved: u64,
}

impl QueryStats {
    pub fn add(&mut self, o: &QueryStats) {
        self.viable += o.viable;
        self.dead += o.dead;
        self.false_prunes += o.false_prunes;
        self.missed_dead += o.missed_dead;
        self.unresolved += o.unresolved;
    }

    pub fn alpha_v(&self) -> f64 {
        ratio(self.false_prunes, self.viable)
    }

    pub fn precision(&self) -> f64 {
        let tp = self.dead - self.missed_dead;
        if tp + self.false_prunes == 0 {
            1.0
        } else {
            tp as f64 / (tp + self.false_prunes) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.dead == 0 {
            1.0
        } else {
            (self.dead - self.missed_dead) as f64 / self.dead as f64
        }
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryRecord {
    pub state: SearchState,
    pub viable: bool,
    pub verdict: Verdict,
}

/// Exact viability oracle with injected noise. Backtracks on dead states
/// (including ones without an exposed contradiction) unless a flip says
/// otherwise.
#[derive(Clone, Debug)]
pub struct CorruptedOracle {
    pub cfg: CorruptionConfig,
    pub node_limit: u64,
    pub stats: QueryStats,
    pub log: Option<Vec<QueryRecord>>,
    runs: [u64; 2],
    rng: Rng,
}

pub fn corrupt_oracle(cfg: CorruptionConfig) -> Result<CorruptedOracle, ThresholdError> {
    cfg.validate()?;
    Ok(CorruptedOracle {
        cfg,
        node_limit: 10_000_000,
        stats: QueryStats::default(),
        log: None,
        runs: [0; 2],
        rng: child_rng(cfg.seed, tag::CORRUPTION, 0),
    })
}

impl CorruptedOracle {
    pub fn with_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn exact() -> Self {
        corrupt_oracle(CorruptionConfig::default()).expect("zero rates are valid")
    }

    fn flip(&mut self, inst: &Instance, state: &SearchState, viable: bool) -> bool {
        let base = if viable { self.cfg.p_fp } else { self.cfg.p_fn };
        if base == 0.0 {
            return false;
        }
        let u = unit_from_hash(derive(self.cfg.seed, tag::CORRUPTION, state_id(state)));
        match self.cfg.structure {
            CorruptionStructure::Iid => u < base,
            CorruptionStructure::DepthDependent { midpoint, slope } => {
                let s = 2.0 / (1.0 + Float::exp(-slope * (state.level as f64 - midpoint)));
                u < (base * s).min(1.0)
            }
            CorruptionStructure::ConfidenceDependent => u < (2.0 * base * tightness(inst, state)).min(1.0),
            CorruptionStructure::Clustered { mean_run } => {
                let class = viable as usize;
                if self.runs[class] > 0 {
                    self.runs[class] -= 1;
                    return true;
                }
                let start = base / (mean_run * (1.0 - base) + base);
                if self.rng.gen::<f64>() < start {
                    // Geometric run length on 1, 2, ... with mean `mean_run`.
                    let q = 1.0 / mean_run;
                    let mut len = 1;
                    while q < 1.0 && self.rng.gen::<f64>() >= q {
                        len += 1;
                    }
                    self.runs[class] = len - 1;
                    true
                } else {
                    false
                }
            }
        }
    }
}

/// Hash of the assignment vector.
pub fn state_id(state: &SearchState) -> u64 {
    let bytes: Vec<u8> = state.assignment.iter().map(|x| x.map_or(255, |v| v as u8)).collect();
    fnv1a(&bytes)
}

/// Fraction of open constraints that are nearly decided: residual clauses
/// with at most two literals, or open nodes with at most one color left.
pub fn tightness(inst: &Instance, state: &SearchState) -> f64 {
    match inst {
        Instance::Sat(cnf) => {
            let r = cnf.residual(&state.assignment);
            if r.is_empty() {
                0.0
            } else {
                r.iter().filter(|(_, l)| l.len() <= 2).count() as f64 / r.len() as f64
            }
        }
        _ => {
            let open: Vec<usize> = (0..state.num_vars()).filter(|&v| state.assignment[v].is_none()).collect();
            if open.is_empty() {
                0.0
            } else {
                open.iter().filter(|&&v| state.domains[v].len() <= 1).count() as f64 / open.len() as f64
            }
        }
    }
}

impl Verifier<Instance> for CorruptedOracle {
    fn query(&mut self, engine: &Engine<Instance>, state: &SearchState) -> Verdict {
        let inst = engine.adapter;
        let is_viable = state.conflict.is_none()
            && viable(inst, &state.assignment, self.node_limit).unwrap_or_else(|_| {
                self.stats.unresolved += 1;
                true
            });
        let flipped = self.flip(inst, state, is_viable);
        let dead_verdict = !is_viable ^ flipped;
        if is_viable {
            self.stats.viable += 1;
            self.stats.false_prunes += flipped as u64;
        } else {
            self.stats.dead += 1;
            self.stats.missed_dead += flipped as u64;
        }
        let verdict = if dead_verdict { Verdict::Backtrack } else { Verdict::Continue };
        if let Some(log) = &mut self.log {
            log.push(QueryRecord { state: state.clone(), viable: is_viable, verdict });
        }
        verdict
    }
}

/// `(1 - alpha)^m`: survival of one solution path through `m` viable queries.
pub fn survival_lower_bound(alpha: f64, m: f64) -> f64 {
    Float::powf(1.0 - alpha, m)
}

/// Survival when any of `r_eff` independent paths of `m_eff` queries suffices.
pub fn multi_path_model(alpha: f64, m_eff: f64, r_eff: f64) -> f64 {
    1.0 - Float::powf(1.0 - survival_lower_bound(alpha, m_eff), r_eff)
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MultiPathFit {
    pub m_eff: f64,
    pub r_eff: f64,
    pub sse: f64,
    pub residuals: Vec<f64>,
}

/// Least-squares fit of the multi-path model to `(alpha, solve rate)` points:
/// a log-spaced grid, then pattern search in log space.
pub fn fit_multipath(points: &[(f64, f64)]) -> Result<MultiPathFit, ThresholdError> {
    if points.len() < 2 {
        return Err(ThresholdError::InvalidParams("need at least two curve points"));
    }
    let sse = |lm: f64, lr: f64| -> f64 {
        let (m, r) = (Float::exp(lm), Float::exp(lr));
        points.iter().map(|&(a, s)| (multi_path_model(a, m, r) - s).powi(2)).sum()
    };
    let (lm_max, lr_max) = (Float::ln(1000.0), Float::ln(1000.0));
    let mut best = (0.0, 0.0, f64::INFINITY);
    for i in 0..=60 {
        for j in 0..=60 {
            let (lm, lr) = (lm_max * i as f64 / 60.0, lr_max * j as f64 / 60.0);
            let e = sse(lm, lr);
            if e < best.2 {
                best = (lm, lr, e);
            }
        }
    }
    let mut step = lm_max / 60.0;
    while step > 1e-9 {
        let mut moved = false;
        for (dm, dr) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
            let (lm, lr) = ((best.0 + dm).clamp(0.0, lm_max), (best.1 + dr).clamp(0.0, lr_max));
            let e = sse(lm, lr);
            if e < best.2 {
                best = (lm, lr, e);
                moved = true;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    let (m_eff, r_eff) = (Float::exp(best.0), Float::exp(best.1));
    let residuals = points.iter().map(|&(a, s)| s - multi_path_model(a, m_eff, r_eff)).collect();
    if !best.2.is_finite() {
        return Err(ThresholdError::FitDiverged { sse: best.2, residuals });
    }
    Ok(MultiPathFit { m_eff, r_eff, sse: best.2, residuals })
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CriticalRate {
    /// `1 - q^(1/m)`.
    pub exact: f64,
    /// `ln(1/q) / m`.
    pub asymptotic: f64,
}

pub fn critical_threshold(q: f64, m: u32) -> Result<CriticalRate, ThresholdError> {
    if !(q > 0.0 && q <= 1.0) || m == 0 {
        return Err(ThresholdError::InvalidParams("need q in (0, 1] and m >= 1"));
    }
    Ok(CriticalRate { exact: 1.0 - Float::powf(q, 1.0 / m as f64), asymptotic: Float::ln(1.0 / q) / m as f64 })
}

/// Parameters of the threshold picture for one setting.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThresholdModel {
    /// Mean branch points per solution path.
    pub m: f64,
    pub m_eff: f64,
    pub r_eff: f64,
    pub alpha_c: f64,
    pub q: f64,
    /// Query count used for `alpha_c`.
    pub queries: u32,
}

impl ThresholdModel {
    pub fn new(m: f64, fit: &MultiPathFit, q: f64) -> Result<Self, ThresholdError> {
        let queries = (Float::round(m) as u32).max(1);
        let alpha_c = critical_threshold(q, queries)?.exact;
        Ok(Self { m, m_eff: fit.m_eff, r_eff: fit.r_eff, alpha_c, q, queries })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct McPoint {
    pub alpha: f64,
    pub survival: f64,
    pub lo: f64,
    pub hi: f64,
    pub analytic: f64,
}

impl McPoint {
    pub fn covers_analytic(&self) -> bool {
        self.lo <= self.analytic && self.analytic <= self.hi
    }
}

/// Wilson score interval for `k` successes out of `n` at normal quantile `z`.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let (n, p) = (n as f64, k as f64 / n as f64);
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * Float::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / (1.0 + z2 / n);
    // The bounds at k = 0 and k = n are exactly 0 and 1; rounding would
    // otherwise leave them a few ulps inside.
    let lo = if k == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if k as f64 == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Homogeneous query model: each trial makes `m` independent viable queries
/// with false-prune rate `alpha` and survives if none fires.
pub fn monte_carlo_survival(alpha: f64, m: u32, trials: u64, seed: u64, z: f64) -> McPoint {
    let mut rng = child_rng(seed, tag::MONTE_CARLO, alpha.to_bits());
    let survived = (0..trials).filter(|_| (0..m).all(|_| rng.gen::<f64>() >= alpha)).count() as u64;
    let (lo, hi) = wilson_interval(survived, trials, z);
    McPoint { alpha, survival: survived as f64 / trials.max(1) as f64, lo, hi, analytic: survival_lower_bound(alpha, m as f64) }
}

/// First `alpha` at which a decreasing survival curve crosses `q`, by linear
/// interpolation between grid points.
pub fn survival_crossing(points: &[(f64, f64)], q: f64) -> Option<f64> {
    points.windows(2).find_map(|w| {
        let ((a0, s0), (a1, s1)) = (w[0], w[1]);
        (s0 >= q && s1 < q).then(|| if s0 == s1 { a0 } else { a0 + (s0 - q) * (a1 - a0) / (s0 - s1) })
    })
}

/// Which verdict class the sweep corrupts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SweepSide {
    FalsePositive,
    FalseNegative,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepConfig {
    pub policy: HeuristicKind,
    pub budget_tokens: u64,
    pub structure: CorruptionStructure,
    pub chronological: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            policy: HeuristicKind::OccurrenceDomain,
            budget_tokens: 1_000_000,
            structure: CorruptionStructure::Iid,
            chronological: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CurveRow {
    pub side: SweepSide,
    pub rate: f64,
    pub runs: usize,
    pub solve_rate: f64,
    pub alpha_v: f64,
    pub precision: f64,
    pub recall: f64,
    pub mean_backtracks: f64,
    /// Mean backtracks beyond the uncorrupted run of the same instance.
    pub extra_backtracks: f64,
    pub stats: QueryStats,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepReport {
    pub rows: Vec<CurveRow>,
    /// Mean over instances of viable queries on the realized solution path of
    /// the uncorrupted run.
    pub mean_branch_points: f64,
}

/// Viable queried states that lie on the path to `solution`.
pub fn branch_points(log: &[QueryRecord], solution: &[Option<Val>]) -> usize {
    log.iter()
        .filter(|r| r.viable && r.state.assignment.iter().zip(solution).all(|(a, s)| a.is_none() || a == s))
        .count()
}

struct Episode {
    solved: bool,
    backtracks: u64,
    stats: QueryStats,
    branch_points: usize,
}

fn episode(inst: &Instance, oracle: CorruptedOracle, sc: &SweepConfig, policy_seed: u64) -> Result<Episode, ThresholdError> {
    let policy = heuristic::<Instance>(sc.policy, inst.num_vars(), policy_seed);
    let mut agent = PolicyVerifier::new(policy, oracle);
    let rc = RunConfig {
        budget_tokens: sc.budget_tokens,
        chronological: sc.chronological,
        record_events: false,
        known_satisfiable: Some(true),
        ..RunConfig::default()
    };
    let run = run_search(inst, &mut agent, &rc)?;
    let oracle = agent.verifier;
    let bp = match &oracle.log {
        Some(log) if run.solved() => branch_points(log, &run.final_state.assignment),
        _ => 0,
    };
    Ok(Episode { solved: run.solved(), backtracks: run.backtracks, stats: oracle.stats, branch_points: bp })
}

/// Solve rate and verifier quality per corruption rate, over every
/// (instance, seed) pair. Each pair's verifier seed is derived from the seed
/// and the instance index, so rates share their flip draws.
pub fn run_corruption_sweep(
    instances: &[Instance],
    side: SweepSide,
    grid: &[f64],
    seeds: &[u64],
    sc: &SweepConfig,
) -> Result<SweepReport, ThresholdError> {
    if instances.is_empty() || seeds.is_empty() {
        return Err(ThresholdError::InvalidParams("sweep needs instances and seeds"));
    }
    let mut base = Vec::with_capacity(instances.len());
    let mut bp_sum = 0usize;
    for (i, inst) in instances.iter().enumerate() {
        let e = episode(inst, CorruptedOracle::exact().with_log(), sc, derive(0, tag::POLICY, i as u64))?;
        bp_sum += e.branch_points;
        base.push(e.backtracks);
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &rate in grid {
        let mut stats = QueryStats::default();
        let (mut solved, mut bts, mut extra, mut runs) = (0usize, 0u64, 0i64, 0usize);
        for &seed in seeds {
            for (i, inst) in instances.iter().enumerate() {
                let s = derive(seed, tag::CORRUPTION, i as u64);
                let (p_fp, p_fn) = match side {
                    SweepSide::FalsePositive => (rate, 0.0),
                    SweepSide::FalseNegative => (0.0, rate),
                };
                let oracle = corrupt_oracle(CorruptionConfig { p_fp, p_fn, structure: sc.structure, seed: s })?;
                let e = episode(inst, oracle, sc, derive(0, tag::POLICY, i as u64))?;
                solved += e.solved as usize;
                bts += e.backtracks;
                extra += e.backtracks as i64 - base[i] as i64;
                stats.add(&e.stats);
                runs += 1;
            }
        }
        rows.push(CurveRow {
            side,
            rate,
            runs,
            solve_rate: solved as f64 / runs as f64,
            alpha_v: stats.alpha_v(),
            precision: stats.precision(),
            recall: stats.recall(),
            mean_backtracks: bts as f64 / runs as f64,
            extra_backtracks: extra as f64 / runs as f64,
            stats,
        });
    }
    Ok(SweepReport { rows, mean_branch_points: bp_sum as f64 / instances.len() as f64 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ProbeVerdict {
    Dead,
    Unknown,
}

/// Exhaustive search below `state` that gives up after `conflicts` dead
/// leaves. Only a completed refutation yields `Dead`, so viable states are
/// never called dead. A state whose contradiction is already exposed is dead
/// without search.
pub fn bounded_probe<D: DomainAdapter + ?Sized>(adapter: &D, state: &SearchState, conflicts: u64) -> ProbeVerdict {
    if state.conflict.is_some() {
        return ProbeVerdict::Dead;
    }
    let engine = Engine::new(adapter);
    let mut used = 0u64;
    match refute(&engine, state, conflicts, &mut used) {
        Some(true) => ProbeVerdict::Dead,
        _ => ProbeVerdict::Unknown,
    }
}

/// `Some(true)` when the subtree is dead, `Some(false)` on a solution,
/// `None` when the conflict budget ran out.
fn refute<D: DomainAdapter + ?Sized>(engine: &Engine<D>, s: &SearchState, budget: u64, used: &mut u64) -> Option<bool> {
    if engine.is_goal(s) {
        return Some(false);
    }
    let Some(&(var, _)) = ranked_candidates(engine.adapter, s).first().filter(|_| s.conflict.is_none()) else {
        *used += 1;
        return (*used <= budget).then_some(true);
    };
    for value in s.domains[var as usize].iter() {
        let mut child = s.clone();
        engine.step(&mut child, Action::Branch { var, value }, Origin::Policy).ok()?;
        if !refute(engine, &child, budget, used)? {
            return Some(false);
        }
    }
    Some(true)
}

/// Backtracks when the probe proves the state dead.
#[derive(Clone, Copy, Debug)]
pub struct BoundedProbe {
    pub conflicts: u64,
}

impl<D: DomainAdapter + ?Sized> Verifier<D> for BoundedProbe {
    fn query(&mut self, engine: &Engine<D>, state: &SearchState) -> Verdict {
        match bounded_probe(engine.adapter, state, self.conflicts) {
            ProbeVerdict::Dead => Verdict::Backtrack,
            ProbeVerdict::Unknown => Verdict::Continue,
        }
    }
}

/// Nodes of the search tree below `state` under the occurrence-domain
/// policy, counting `state` itself. Conflict states and dead ends with
/// nothing left to branch on are leaves.
pub fn subtree_size<D: DomainAdapter + ?Sized>(engine: &Engine<D>, state: &SearchState) -> u64 {
    if state.conflict.is_some() || engine.is_goal(state) {
        return 1;
    }
    let mut policy = OccurrenceDomain;
    let Some((var, _)) = crate::search::Policy::choose(&mut policy, engine, state) else {
        return 1;
    };
    let mut n = 1;
    for value in state.domains[var as usize].iter() {
        let mut child = state.clone();
        if engine.step(&mut child, Action::Branch { var, value }, Origin::Policy).is_ok() {
            n += subtree_size(engine, &child);
        }
    }
    n
}

/// Backtrack overhead of a false-negative-only verifier against the exact
/// oracle, with the bound from the dead subtrees it wandered into.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FnOverhead {
    pub oracle_backtracks: u64,
    pub backtracks: u64,
    /// Sizes of the minimal missed dead subtrees.
    pub subtrees: Vec<u64>,
    pub solved: bool,
}

impl FnOverhead {
    pub fn extra(&self) -> i64 {
        self.backtracks as i64 - self.oracle_backtracks as i64
    }

    pub fn bound(&self) -> u64 {
        self.subtrees.iter().map(|s| s - 1).sum()
    }

    pub fn holds(&self) -> bool {
        self.extra() <= self.bound() as i64
    }
}

/// Run the exact oracle and an FN-corrupted copy with chronological
/// backtracking and unlimited budget, so every detour into a missed dead
/// subtree rejoins the oracle's trajectory.
pub fn fn_overhead(inst: &Instance, p_fn: f64, seed: u64) -> Result<FnOverhead, ThresholdError> {
    let sc = SweepConfig { budget_tokens: u64::MAX / 4, chronological: true, ..SweepConfig::default() };
    let oracle = episode(inst, CorruptedOracle::exact(), &sc, 0)?;
    let noisy = corrupt_oracle(CorruptionConfig::fn_only(p_fn, seed))?.with_log();
    let policy = heuristic::<Instance>(sc.policy, inst.num_vars(), 0);
    let mut agent = PolicyVerifier::new(policy, noisy);
    let rc = RunConfig { budget_tokens: sc.budget_tokens, chronological: true, record_events: false, ..RunConfig::default() };
    let run = run_search(inst, &mut agent, &rc)?;
    let engine = Engine::new(inst).with_chronological(true);
    let log = agent.verifier.log.take().unwrap_or_default();
    let mut roots: Vec<&SearchState> = Vec::new();
    let mut subtrees = Vec::new();
    for r in log.iter().filter(|r| !r.viable && r.verdict == Verdict::Continue) {
        let inside = roots.iter().any(|u| {
            u.assignment.iter().zip(&r.state.assignment).all(|(a, b)| a.is_none() || a == b)
        });
        if !inside {
            roots.push(&r.state);
            subtrees.push(subtree_size(&engine, &r.state));
        }
    }
    Ok(FnOverhead { oracle_backtracks: oracle.backtracks, backtracks: run.backtracks, subtrees, solved: run.solved() })
}
