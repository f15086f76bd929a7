//! Exact checks over small discrete worlds (state S, history H, trace
//! T = phi(S), binary label Y with Y independent of H given S), the r^k
//! retrieval model for star trees, and a linear history-irrelevance probe.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::rng::{child_rng, tag, Rng};

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum TheoryError {
    #[error("invalid world: {0}")]
    InvalidWorld(&'static str),
    #[error("accuracy at the anchor k is missing or outside (0, 1]")]
    MissingAnchor,
    #[error("degenerate probe features: {0}")]
    DegenerateFeatures(&'static str),
}

/// Joint law of (S, H) with `eta_s[s] = Pr(Y = 1 | S = s)`, so Y depends on
/// H only through S. `f[t][h]` is a predictor of Y from (T, H).
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteWorld {
    pub p_sh: Vec<Vec<f64>>,
    pub eta_s: Vec<f64>,
    pub phi: Vec<usize>,
    pub num_t: usize,
    pub f: Vec<Vec<f64>>,
}

/// Largest support size for S, H, or T.
pub const MAX_SUPPORT: usize = 8;

impl DiscreteWorld {
    pub fn validate(&self) -> Result<(), TheoryError> {
        let ns = self.eta_s.len();
        if ns == 0 || ns > MAX_SUPPORT || self.p_sh.len() != ns {
            return Err(TheoryError::InvalidWorld("state support size"));
        }
        let nh = self.p_sh[0].len();
        if nh == 0 || nh > MAX_SUPPORT || self.p_sh.iter().any(|r| r.len() != nh) {
            return Err(TheoryError::InvalidWorld("history support size"));
        }
        if self.num_t == 0 || self.num_t > MAX_SUPPORT || self.phi.len() != ns || self.phi.iter().any(|&t| t >= self.num_t) {
            return Err(TheoryError::InvalidWorld("trace map"));
        }
        if self.f.len() != self.num_t || self.f.iter().any(|r| r.len() != nh) {
            return Err(TheoryError::InvalidWorld("predictor table shape"));
        }
        let total: f64 = self.p_sh.iter().flatten().sum();
        if self.p_sh.iter().flatten().any(|&p| p < 0.0) || Float::abs(total - 1.0) > 1e-12 {
            return Err(TheoryError::InvalidWorld("probabilities must be nonnegative and sum to 1"));
        }
        if self.eta_s.iter().chain(self.f.iter().flatten()).any(|x| !(0.0..=1.0).contains(x)) {
            return Err(TheoryError::InvalidWorld("label rates and predictions lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn num_h(&self) -> usize {
        self.p_sh[0].len()
    }

    /// Random world. With `history_irrelevant`, H is drawn given T alone,
    /// which makes Y independent of H given T.
    pub fn random(rng: &mut Rng, history_irrelevant: bool) -> Self {
        let ns = rng.gen_range(1..=MAX_SUPPORT);
        let nh = rng.gen_range(1..=MAX_SUPPORT);
        let num_t = rng.gen_range(1..=ns);
        let mut phi: Vec<usize> = (0..ns).map(|s| if s < num_t { s } else { rng.gen_range(0..num_t) }).collect();
        phi.shuffle(rng);
        let simplex = |rng: &mut Rng, n: usize| {
            let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect::<Vec<f64>>()
        };
        let p_s = simplex(rng, ns);
        let p_sh: Vec<Vec<f64>> = if history_irrelevant {
            let h_given_t: Vec<Vec<f64>> = (0..num_t).map(|_| simplex(rng, nh)).collect();
            (0..ns).map(|s| h_given_t[phi[s]].iter().map(|q| p_s[s] * q).collect()).collect()
        } else {
            let flat = simplex(rng, ns * nh);
            flat.chunks(nh).map(|c| c.to_vec()).collect()
        };
        let mut w = Self {
            p_sh,
            eta_s: (0..ns).map(|_| rng.gen()).collect(),
            phi,
            num_t,
            f: (0..num_t).map(|_| (0..nh).map(|_| rng.gen()).collect()).collect(),
        };
        w.renormalize();
        w
    }

    /// Rescale the joint table so it sums to 1 up to rounding.
    fn renormalize(&mut self) {
        let total: f64 = self.p_sh.iter().flatten().sum();
        self.p_sh.iter_mut().flatten().for_each(|p| *p /= total);
    }

    /// Same world with the predictor replaced by a function of T alone.
    pub fn with_trace_predictor(&self, g: &[f64]) -> Self {
        Self { f: g.iter().map(|&x| vec![x; self.num_h()]).collect(), ..self.clone() }
    }

    fn p_th(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.num_h()]; self.num_t];
        for (s, row) in self.p_sh.iter().enumerate() {
            for (h, &p) in row.iter().enumerate() {
                out[self.phi[s]][h] += p;
            }
        }
        out
    }

    fn p_t(&self) -> Vec<f64> {
        self.p_th().iter().map(|r| r.iter().sum()).collect()
    }

    /// `Pr(Y = 1 | T = t)`; zero-mass traces get 0.
    pub fn eta_t(&self) -> Vec<f64> {
        let mut num = vec![0.0; self.num_t];
        for (s, row) in self.p_sh.iter().enumerate() {
            num[self.phi[s]] += row.iter().sum::<f64>() * self.eta_s[s];
        }
        num.iter().zip(self.p_t()).map(|(n, d)| if d > 0.0 { n / d } else { 0.0 }).collect()
    }

    /// `Pr(Y = 1 | T = t, H = h)`.
    pub fn eta_th(&self) -> Vec<Vec<f64>> {
        let mut num = vec![vec![0.0; self.num_h()]; self.num_t];
        for (s, row) in self.p_sh.iter().enumerate() {
            for (h, &p) in row.iter().enumerate() {
                num[self.phi[s]][h] += p * self.eta_s[s];
            }
        }
        let den = self.p_th();
        num.iter().zip(&den).map(|(n, d)| n.iter().zip(d).map(|(a, b)| if *b > 0.0 { a / b } else { 0.0 }).collect()).collect()
    }

    /// `E[f | T = t]`.
    pub fn mean_f_given_t(&self) -> Vec<f64> {
        let pth = self.p_th();
        (0..self.num_t)
            .map(|t| {
                let d: f64 = pth[t].iter().sum();
                if d > 0.0 {
                    // Offsets from the first entry keep a constant row exact.
                    let f0 = self.f[t][0];
                    f0 + pth[t].iter().zip(&self.f[t]).map(|(p, f)| p * (f - f0)).sum::<f64>() / d
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Largest `|eta(t, h) - eta(t)|` over (t, h) with positive mass.
    pub fn history_relevance(&self) -> f64 {
        let (eth, et, pth) = (self.eta_th(), self.eta_t(), self.p_th());
        let mut m = 0.0f64;
        for t in 0..self.num_t {
            for h in 0..self.num_h() {
                if pth[t][h] > 0.0 {
                    m = m.max(Float::abs(eth[t][h] - et[t]));
                }
            }
        }
        m
    }
}

/// Squared-loss decomposition terms and the total computed directly over
/// (S, H, Y).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Decomposition {
    pub irreducible: f64,
    pub aliasing: f64,
    pub approximation: f64,
    pub entanglement: f64,
    /// `-2 E[(eta(T,H) - eta(T)) (f - E[f | T])]`, zero when history is
    /// irrelevant at the trace level or `f` reads T only.
    pub cross: f64,
    pub total: f64,
}

impl Decomposition {
    pub fn sum_of_terms(&self) -> f64 {
        self.irreducible + self.aliasing + self.approximation + self.entanglement
    }
}

pub fn decomposition_terms(w: &DiscreteWorld) -> Result<Decomposition, TheoryError> {
    w.validate()?;
    let (et, eth, fbar) = (w.eta_t(), w.eta_th(), w.mean_f_given_t());
    let mut d = Decomposition::default();
    for (s, row) in w.p_sh.iter().enumerate() {
        let t = w.phi[s];
        let es = w.eta_s[s];
        for (h, &p) in row.iter().enumerate() {
            let f = w.f[t][h];
            // E[(Y - f)^2 | s, h] with Y ~ Bernoulli(eta_s).
            d.total += p * (es * (1.0 - f) * (1.0 - f) + (1.0 - es) * f * f);
            d.irreducible += p * es * (1.0 - es);
            d.aliasing += p * (es - et[t]) * (es - et[t]);
            d.approximation += p * (et[t] - fbar[t]) * (et[t] - fbar[t]);
            d.entanglement += p * (f - fbar[t]) * (f - fbar[t]);
            d.cross -= 2.0 * p * (eth[t][h] - et[t]) * (f - fbar[t]);
        }
    }
    Ok(d)
}

/// Entanglement `E[Var(f | T)]` and half the expected squared disagreement
/// under an independent redraw of H given T.
pub fn transplant_identity(w: &DiscreteWorld) -> Result<(f64, f64), TheoryError> {
    w.validate()?;
    let pth = w.p_th();
    let fbar = w.mean_f_given_t();
    let (mut ent, mut half) = (0.0, 0.0);
    for t in 0..w.num_t {
        let pt: f64 = pth[t].iter().sum();
        if pt <= 0.0 {
            continue;
        }
        for h in 0..w.num_h() {
            ent += pth[t][h] * (w.f[t][h] - fbar[t]) * (w.f[t][h] - fbar[t]);
            for h2 in 0..w.num_h() {
                let d = w.f[t][h] - w.f[t][h2];
                half += 0.5 * pth[t][h] * (pth[t][h2] / pt) * d * d;
            }
        }
    }
    Ok((ent, half))
}

fn bern_kl(q: f64, p: f64) -> f64 {
    let term = |a: f64, b: f64| if a > 0.0 { a * Float::ln(a / b) } else { 0.0 };
    term(q, p) + term(1.0 - q, 1.0 - p)
}

/// `I(Y; H | T)` as the expected KL between Bernoulli(eta(T,H)) and
/// Bernoulli(eta(T)).
pub fn conditional_mi(w: &DiscreteWorld) -> f64 {
    let (et, eth, pth) = (w.eta_t(), w.eta_th(), w.p_th());
    let mut i = 0.0;
    for t in 0..w.num_t {
        for h in 0..w.num_h() {
            if pth[t][h] > 0.0 {
                i += pth[t][h] * bern_kl(eth[t][h], et[t]);
            }
        }
    }
    i
}

/// Bayes 0-1 risk gap from adding H, and the bound `sqrt(I / 2)`.
pub fn pinsker_check(w: &DiscreteWorld) -> Result<(f64, f64), TheoryError> {
    w.validate()?;
    let (et, eth, pth) = (w.eta_t(), w.eta_th(), w.p_th());
    let r = |u: f64| u.min(1.0 - u);
    let risk_t: f64 = w.p_t().iter().zip(&et).map(|(p, e)| p * r(*e)).sum();
    let mut risk_th = 0.0;
    for t in 0..w.num_t {
        for h in 0..w.num_h() {
            risk_th += pth[t][h] * r(eth[t][h]);
        }
    }
    Ok((risk_t - risk_th, Float::sqrt(conditional_mi(w).max(0.0) / 2.0)))
}

/// Bayes log-loss gap from adding H, computed as expected loss over
/// (S, H, Y), and `I(Y; H | T)`.
pub fn logloss_identity(w: &DiscreteWorld) -> Result<(f64, f64), TheoryError> {
    w.validate()?;
    let (et, eth) = (w.eta_t(), w.eta_th());
    let nll = |q: f64, y: bool| {
        let p = if y { q } else { 1.0 - q };
        if p > 0.0 {
            -Float::ln(p)
        } else {
            0.0
        }
    };
    let (mut lt, mut lth) = (0.0, 0.0);
    for (s, row) in w.p_sh.iter().enumerate() {
        let t = w.phi[s];
        let es = w.eta_s[s];
        for (h, &p) in row.iter().enumerate() {
            for (y, py) in [(true, es), (false, 1.0 - es)] {
                let m = p * py;
                if m > 0.0 {
                    lt += m * nll(et[t], y);
                    lth += m * nll(eth[t][h], y);
                }
            }
        }
    }
    Ok((lt - lth, conditional_mi(w)))
}

/// A seeded random world; world `i` has its own stream.
pub fn seeded_world(seed: u64, i: u64, history_irrelevant: bool) -> DiscreteWorld {
    DiscreteWorld::random(&mut child_rng(seed, tag::WORLDS, i), history_irrelevant)
}

/// Per-retrieval accuracy from the anchor point and the predicted
/// all-correct accuracy `r^k` at each swept k.
#[derive(Clone, Debug, PartialEq)]
pub struct RkFit {
    pub r: f64,
    pub predicted: Vec<(u32, f64)>,
}

pub fn fit_rk(accuracy: &[(u32, f64)], anchor: u32) -> Result<RkFit, TheoryError> {
    let &(_, a) = accuracy.iter().find(|(k, _)| *k == anchor).ok_or(TheoryError::MissingAnchor)?;
    if !(a > 0.0 && a <= 1.0) || anchor == 0 {
        return Err(TheoryError::MissingAnchor);
    }
    let r = Float::powf(a, 1.0 / anchor as f64);
    Ok(RkFit { r, predicted: accuracy.iter().map(|&(k, _)| (k, Float::powi(r, k as i32))).collect() })
}

/// One labelled example with trace-level features and history features.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSample {
    pub trace: Vec<f64>,
    pub history: Vec<f64>,
    pub label: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub seeds: u64,
    pub test_fraction: f64,
    pub lr: f64,
    pub max_iters: usize,
    /// Stop when the loss changes by less than this.
    pub tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { seeds: 5, test_fraction: 0.3, lr: 0.5, max_iters: 20_000, tol: 1e-8 }
    }
}

/// Held-out accuracy with trace features only and with trace plus history
/// features, per seed, and the lift summary.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub trace_only: Vec<f64>,
    pub with_history: Vec<f64>,
    pub mean_lift: f64,
    pub std_lift: f64,
}

/// Logistic regression by full-batch gradient descent on standardized
/// features; constant columns are dropped.
fn logistic(x: &[Vec<f64>], y: &[bool], cfg: &ProbeConfig) -> (Vec<f64>, f64) {
    let d = x[0].len();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let n = x.len() as f64;
    let mut prev = f64::INFINITY;
    for _ in 0..cfg.max_iters {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        let mut loss = 0.0;
        for (xi, &yi) in x.iter().zip(y) {
            let z = b + xi.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let p = 1.0 / (1.0 + Float::exp(-z));
            let t = yi as u8 as f64;
            loss += Float::ln(1.0 + Float::exp(-z.abs())) + z.max(0.0) - t * z;
            let g = p - t;
            gb += g;
            for (a, c) in gw.iter_mut().zip(xi) {
                *a += g * c;
            }
        }
        loss /= n;
        b -= cfg.lr * gb / n;
        for (a, g) in w.iter_mut().zip(&gw) {
            *a -= cfg.lr * g / n;
        }
        if Float::abs(prev - loss) < cfg.tol {
            break;
        }
        prev = loss;
    }
    (w, b)
}

fn standardize(train: &[Vec<f64>], test: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = train[0].len();
    let n = train.len() as f64;
    let mut keep = Vec::new();
    for j in 0..d {
        let mean = train.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = train.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<f64>() / n;
        if var > 1e-12 {
            keep.push((j, mean, Float::sqrt(var)));
        }
    }
    let map = |rows: &[Vec<f64>]| rows.iter().map(|r| keep.iter().map(|&(j, m, s)| (r[j] - m) / s).collect()).collect();
    (map(train), map(test))
}

fn probe_accuracy(train: &[(Vec<f64>, bool)], test: &[(Vec<f64>, bool)], cfg: &ProbeConfig) -> f64 {
    let xs: Vec<Vec<f64>> = train.iter().map(|r| r.0.clone()).collect();
    let xt: Vec<Vec<f64>> = test.iter().map(|r| r.0.clone()).collect();
    let (xs, xt) = standardize(&xs, &xt);
    let ys: Vec<bool> = train.iter().map(|r| r.1).collect();
    let (w, b) = if xs[0].is_empty() {
        // Intercept only.
        let pos = ys.iter().filter(|&&y| y).count() as f64 / ys.len() as f64;
        (Vec::new(), Float::ln(pos.max(1e-12) / (1.0 - pos).max(1e-12)))
    } else {
        logistic(&xs, &ys, cfg)
    };
    let hits = xt
        .iter()
        .zip(test)
        .filter(|(x, r)| {
            let z = b + x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            (z > 0.0) == r.1
        })
        .count();
    hits as f64 / test.len() as f64
}

/// Logistic probes on trace features alone and on trace plus history
/// features, over `cfg.seeds` random train/test splits.
pub fn history_irrelevance_probe(samples: &[ProbeSample], cfg: &ProbeConfig) -> Result<ProbeResult, TheoryError> {
    if samples.len() < 4 {
        return Err(TheoryError::DegenerateFeatures("need at least four samples"));
    }
    let (dt, dh) = (samples[0].trace.len(), samples[0].history.len());
    if samples.iter().any(|s| s.trace.len() != dt || s.history.len() != dh) {
        return Err(TheoryError::DegenerateFeatures("ragged feature vectors"));
    }
    if samples.iter().all(|s| s.label) || samples.iter().all(|s| !s.label) {
        return Err(TheoryError::DegenerateFeatures("labels have a single class"));
    }
    if cfg.seeds == 0 || !(0.0..1.0).contains(&cfg.test_fraction) {
        return Err(TheoryError::DegenerateFeatures("need at least one seed and a test fraction in (0, 1)"));
    }
    let n_test = ((samples.len() as f64 * cfg.test_fraction).round() as usize).clamp(1, samples.len() - 1);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for seed in 0..cfg.seeds {
        let mut idx: Vec<usize> = (0..samples.len()).collect();
        idx.shuffle(&mut child_rng(seed, tag::SPLIT, 0));
        let (test, train) = idx.split_at(n_test);
        let rows = |ids: &[usize], hist: bool| -> Vec<(Vec<f64>, bool)> {
            ids.iter()
                .map(|&i| {
                    let s = &samples[i];
                    let mut x = s.trace.clone();
                    if hist {
                        x.extend_from_slice(&s.history);
                    }
                    (x, s.label)
                })
                .collect()
        };
        a.push(probe_accuracy(&rows(train, false), &rows(test, false), cfg));
        b.push(probe_accuracy(&rows(train, true), &rows(test, true), cfg));
    }
    let lifts: Vec<f64> = a.iter().zip(&b).map(|(x, y)| y - x).collect();
    let k = lifts.len() as f64;
    let mean = lifts.iter().sum::<f64>() / k;
    let var = lifts.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / k;
    Ok(ProbeResult { trace_only: a, with_history: b, mean_lift: mean, std_lift: Float::sqrt(var) })
}

/// Probe samples from one search run: state features flattened with the
/// conflict flag as trace features; depth, backtracks so far, and the last
/// `k` actions as history features. The label is the backtrack verdict.
pub fn history_probe_samples(cnf: &crate::domains::sat::Cnf, events: &[crate::search::StepEvent], k: usize) -> Vec<ProbeSample> {
    use crate::search::Action;
    let n = cnf.num_vars.max(1) as f64;
    let mut out = Vec::new();
    let mut backtracks = 0.0;
    for (t, e) in events.iter().enumerate() {
        let mut trace: Vec<f64> = crate::protocol::state_features(cnf, &e.state).into_iter().flatten().collect();
        trace.push(e.state.has_conflict() as u8 as f64);
        let mut history = vec![t as f64, backtracks];
        for j in 1..=k {
            match t.checked_sub(j).map(|i| events[i].action) {
                Some(Action::Branch { var, value }) => history.extend([1.0, (var as f64 + 1.0) / n, value as f64]),
                Some(Action::Backtrack) => history.extend([-1.0, 0.0, 0.0]),
                None => history.extend([0.0, 0.0, 0.0]),
            }
        }
        out.push(ProbeSample { trace, history, label: e.action.is_backtrack() });
        backtracks += e.action.is_backtrack() as u8 as f64;
    }
    out
}
