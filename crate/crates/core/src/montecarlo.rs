//! Event-driven simulation, survival estimation and empirical domination tests.
//!
//! Every trajectory draws from its own ChaCha stream keyed by `(seed, stream)`,
//! and trajectories are collected in index order, so results do not depend on
//! the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::generators::{psi_transitions, transitions, GeneratorSpec, Model, TransitionList};
use crate::harmonic::SiteWeights;
use crate::lattice::{Config, LatticeBox, Site};

/// Streams at or above this offset are reserved for pilot runs.
pub const PILOT_STREAM_OFFSET: u64 = 1 << 40;
pub const PILOT_TRIALS: usize = 10_000;
pub const MIN_ACCEPTANCE: f64 = 1e-4;
/// Initial draws attempted before declaring that the pattern fills the box.
const MAX_INIT_ATTEMPTS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream_id);
        r
    }
}

/// Two-sided normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

/// Wilson score interval at 95%.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let lo_exact = successes == 0;
    let hi_exact = successes == trials;
    let z = normal_quantile(0.975);
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    let lo = if lo_exact { 0.0 } else { (centre - half).max(0.0) };
    let hi = if hi_exact { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

fn exp_sample(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathOutcome {
    /// Hitting time of the pattern; `None` if censored at the horizon.
    pub tau: Option<f64>,
    /// State at `min(τ, horizon)`.
    pub state: Config,
    pub events: u64,
}

/// Gillespie simulation over `rates`, stopped at the first killing move or at `horizon`.
/// `on_hold` receives every state with its holding time inside `[0, horizon]`.
pub fn simulate_chain(
    init: &Config,
    horizon: f64,
    rng: &mut ChaCha8Rng,
    rates: &dyn Fn(&Config) -> TransitionList,
    on_hold: &mut dyn FnMut(&Config, f64),
) -> PathOutcome {
    let mut state = init.clone();
    let mut t = 0.0;
    let mut events = 0;
    loop {
        let list = rates(&state);
        let total = list.total_rate();
        let dt = if total > 0.0 { exp_sample(rng, total) } else { f64::INFINITY };
        if t + dt >= horizon {
            on_hold(&state, horizon - t);
            return PathOutcome { tau: None, state, events };
        }
        on_hold(&state, dt);
        t += dt;
        events += 1;
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = list.transitions.len() - 1;
        for (k, tr) in list.transitions.iter().enumerate() {
            if pick < tr.rate {
                chosen = k;
                break;
            }
            pick -= tr.rate;
        }
        let tr = &list.transitions[chosen];
        state = tr.target.clone();
        if tr.killing {
            return PathOutcome { tau: Some(t), state, events };
        }
    }
}

/// Trajectory of the model from `init`; `τ = 0` when `init` lies in the pattern.
pub fn sample_path(spec: &GeneratorSpec, init: &Config, horizon: f64, rng: &mut ChaCha8Rng) -> Result<PathOutcome> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
    }
    if init.width() != spec.width() {
        return Err(Error::InvalidParameter("initial configuration has the wrong width".into()));
    }
    if spec.in_pattern(init) {
        return Ok(PathOutcome { tau: Some(0.0), state: init.clone(), events: 0 });
    }
    Ok(simulate_chain(init, horizon, rng, &|c| transitions(spec, c), &mut |_, _| {}))
}

/// Product Bernoulli(ρ) draw conditioned off the pattern by rejection.
pub fn draw_initial(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Result<Config> {
    let w = spec.width();
    for _ in 0..MAX_INIT_ATTEMPTS {
        let mut c = Config::empty(w);
        for i in 0..w {
            if rng.random::<f64>() < spec.rho() {
                c.set(i, true);
            }
        }
        if !spec.in_pattern(&c) {
            return Ok(c);
        }
    }
    Err(Error::InvalidParameter("no initial configuration off the pattern was accepted".into()))
}

#[derive(Debug, Clone, Serialize)]
pub struct SurvivalCurve {
    pub t: Vec<f64>,
    pub survivors: Vec<usize>,
    pub estimate: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub trials: usize,
}

impl SurvivalCurve {
    pub fn from_hitting_times(grid: &[f64], taus: &[Option<f64>]) -> Self {
        let trials = taus.len();
        let survivors: Vec<usize> = grid.iter().map(|&t| taus.iter().filter(|tau| tau.is_none_or(|x| x > t)).count()).collect();
        let estimate = survivors.iter().map(|&s| s as f64 / trials as f64).collect();
        let (ci_lo, ci_hi) = survivors.iter().map(|&s| wilson_interval(s, trials)).unzip();
        Self { t: grid.to_vec(), survivors, estimate, ci_lo, ci_hi, trials }
    }
}

fn check_grid(grid: &[f64]) -> Result<f64> {
    if grid.is_empty() || grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("time grid must be nonempty, finite, nonnegative and nondecreasing".into()));
    }
    Ok(grid[grid.len() - 1])
}

/// Survival curve from `ν_ρ` conditioned off the pattern.
pub fn survival_curve(spec: &GeneratorSpec, grid: &[f64], trials: usize, seed: u64) -> Result<SurvivalCurve> {
    let horizon = check_grid(grid)?.max(f64::MIN_POSITIVE);
    let taus: Vec<Option<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(seed, k).rng();
            let init = draw_initial(spec, &mut rng)?;
            Ok(sample_path(spec, &init, horizon, &mut rng)?.tau)
        })
        .collect::<Result<_>>()?;
    Ok(SurvivalCurve::from_hitting_times(grid, &taus))
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaFit {
    pub lambda: f64,
    pub stderr: f64,
    pub points: usize,
    pub t_min: f64,
    pub t_max: f64,
}

impl LambdaFit {
    pub fn ci95(&self) -> (f64, f64) {
        let z = normal_quantile(0.975);
        (self.lambda - z * self.stderr, self.lambda + z * self.stderr)
    }

    pub fn covers(&self, lambda: f64) -> bool {
        let (lo, hi) = self.ci95();
        lo <= lambda && lambda <= hi
    }
}

/// Least-squares slope of `−log P̂` on `[t_min, t_max]`, with the delta-method
/// covariance `Cov(log P̂_s, log P̂_t) = (1 − P_s)/(N P_s)` for `s ≤ t`.
pub fn lambda_fit(curve: &SurvivalCurve, t_min: f64, t_max: f64) -> Result<LambdaFit> {
    let idx: Vec<usize> = (0..curve.t.len()).filter(|&i| curve.t[i] >= t_min && curve.t[i] <= t_max).collect();
    if idx.len() < 3 {
        return Err(Error::WindowTooSmall { points: idx.len() });
    }
    if let Some(&i) = idx.iter().find(|&&i| curve.estimate[i] <= 0.0) {
        return Err(Error::NonPositiveEstimate { t: curve.t[i] });
    }
    let ts: Vec<f64> = idx.iter().map(|&i| curve.t[i]).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| -curve.estimate[i].ln()).collect();
    let m = ts.len() as f64;
    let tbar = ts.iter().sum::<f64>() / m;
    let ybar = ys.iter().sum::<f64>() / m;
    let sxx: f64 = ts.iter().map(|t| (t - tbar).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::WindowTooSmall { points: 1 });
    }
    let lambda = ts.iter().zip(&ys).map(|(t, y)| (t - tbar) * (y - ybar)).sum::<f64>() / sxx;
    let c: Vec<f64> = ts.iter().map(|t| (t - tbar) / sxx).collect();
    let n = curve.trials as f64;
    let mut var = 0.0;
    for a in 0..idx.len() {
        for b in 0..idx.len() {
            let early = idx[a.min(b)];
            let p = curve.estimate[early];
            var += c[a] * c[b] * (1.0 - p) / (n * p);
        }
    }
    Ok(LambdaFit { lambda, stderr: var.max(0.0).sqrt(), points: idx.len(), t_min, t_max })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionedSample {
    pub t: f64,
    pub samples: Vec<Config>,
    pub attempted: usize,
    pub pilot_acceptance: f64,
}

impl ConditionedSample {
    pub fn acceptance(&self) -> f64 {
        self.samples.len() as f64 / self.attempted.max(1) as f64
    }
}

/// Survival fraction at `t` from a pilot run on reserved streams.
pub fn pilot_acceptance(spec: &GeneratorSpec, t: f64, seed: u64) -> Result<f64> {
    if t <= 0.0 {
        return Ok(1.0);
    }
    let hits: usize = (0..PILOT_TRIALS as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(seed, PILOT_STREAM_OFFSET + k).rng();
            let init = draw_initial(spec, &mut rng)?;
            Ok(usize::from(sample_path(spec, &init, t, &mut rng)?.tau.is_none()))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(hits as f64 / PILOT_TRIALS as f64)
}

/// Rejection sampler for `T_t(ν_ρ)`: `attempts` trajectories from `ν_ρ` off
/// the pattern, keeping `η_t` on survival.
pub fn conditioned_sample(spec: &GeneratorSpec, t: f64, attempts: usize, seed: u64) -> Result<ConditionedSample> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("time must be finite and nonnegative, got {t}")));
    }
    let pilot = pilot_acceptance(spec, t, seed)?;
    if pilot < MIN_ACCEPTANCE {
        return Err(Error::AcceptanceTooLow { rate: pilot, min: MIN_ACCEPTANCE });
    }
    let horizon = t.max(f64::MIN_POSITIVE);
    let kept: Vec<Option<Config>> = (0..attempts as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(seed, k).rng();
            let init = draw_initial(spec, &mut rng)?;
            if t == 0.0 {
                return Ok(Some(init));
            }
            let out = sample_path(spec, &init, horizon, &mut rng)?;
            Ok(out.tau.is_none().then_some(out.state))
        })
        .collect::<Result<_>>()?;
    Ok(ConditionedSample { t, samples: kept.into_iter().flatten().collect(), attempted: attempts, pilot_acceptance: pilot })
}

/// Fleming–Viot particle approximation of `T_t(ν_ρ)`; biased at finite `particles`.
pub fn fleming_viot(spec: &GeneratorSpec, t: f64, particles: usize, seed: u64) -> Result<Vec<Config>> {
    if particles < 2 {
        return Err(Error::InvalidParameter("Fleming-Viot needs at least two particles".into()));
    }
    let mut rng = RngStream::new(seed, 0).rng();
    let mut states: Vec<Config> = (0..particles).map(|_| draw_initial(spec, &mut rng)).collect::<Result<_>>()?;
    let mut lists: Vec<TransitionList> = states.iter().map(|c| transitions(spec, c)).collect();
    let mut totals: Vec<f64> = lists.iter().map(|l| l.total_rate()).collect();
    let mut now = 0.0;
    loop {
        let total: f64 = totals.iter().sum();
        if total <= 0.0 {
            break;
        }
        now += exp_sample(&mut rng, total);
        if now >= t {
            break;
        }
        let mut pick = rng.random::<f64>() * total;
        let mut who = particles - 1;
        for (k, &r) in totals.iter().enumerate() {
            if pick < r {
                who = k;
                break;
            }
            pick -= r;
        }
        let list = &lists[who];
        let mut pick = rng.random::<f64>() * totals[who];
        let mut tr = &list.transitions[list.transitions.len() - 1];
        for cand in &list.transitions {
            if pick < cand.rate {
                tr = cand;
                break;
            }
            pick -= cand.rate;
        }
        states[who] = if tr.killing {
            let other = (who + 1 + rng.random_range(0..particles - 1)) % particles;
            states[other].clone()
        } else {
            tr.target.clone()
        };
        lists[who] = transitions(spec, &states[who]);
        totals[who] = lists[who].total_rate();
    }
    Ok(states)
}

#[derive(Debug, Clone, Serialize)]
pub struct SiteEstimate {
    pub site: Site,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Site occupation frequencies with Wilson intervals.
pub fn empirical_marginals(samples: &[Config], width: usize) -> Vec<SiteEstimate> {
    (0..width)
        .map(|i| {
            let k = samples.iter().filter(|c| c.get(i)).count();
            let (ci_lo, ci_hi) = wilson_interval(k, samples.len());
            SiteEstimate { site: i, mean: k as f64 / samples.len().max(1) as f64, ci_lo, ci_hi }
        })
        .collect()
}

/// States at time `t` of independent trajectories from a fixed configuration,
/// with killed trajectories dropped.
pub fn time_t_states(spec: &GeneratorSpec, init: &Config, t: f64, trials: usize, seed: u64) -> Result<Vec<Config>> {
    let out: Vec<Option<Config>> = (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(seed, k).rng();
            let p = sample_path(spec, init, t.max(f64::MIN_POSITIVE), &mut rng)?;
            Ok(p.tau.is_none().then_some(p.state))
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().flatten().collect())
}

/// Increasing functions used by [`domination_mc`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum IncreasingFn {
    Site(Site),
    /// Particle count over a set of sites.
    Count(Vec<Site>),
    /// All sites occupied (minimum over a chain).
    AllOf(Vec<Site>),
    /// Some site occupied (maximum over a chain).
    AnyOf(Vec<Site>),
}

impl IncreasingFn {
    pub fn eval(&self, c: &Config) -> f64 {
        match self {
            Self::Site(i) => c.occ(*i) as f64,
            Self::Count(s) => c.count_in(s) as f64,
            Self::AllOf(s) => f64::from(s.iter().all(|&i| c.get(i))),
            Self::AnyOf(s) => f64::from(s.iter().any(|&i| c.get(i))),
        }
    }

    pub fn name(&self) -> String {
        let list = |s: &[Site]| s.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("+");
        match self {
            Self::Site(i) => format!("site[{i}]"),
            Self::Count(s) => format!("count[{}]", list(s)),
            Self::AllOf(s) => format!("all[{}]", list(s)),
            Self::AnyOf(s) => format!("any[{}]", list(s)),
        }
    }
}

/// Site indicators, particle counts in balls around the origin, and random
/// subset sums, minima and maxima.
pub fn standard_battery(lattice: &LatticeBox, random_sets: usize, seed: u64) -> Vec<IncreasingFn> {
    let mut out: Vec<IncreasingFn> = lattice.sites().map(IncreasingFn::Site).collect();
    let max_r = lattice.sites().map(|i| lattice.distance_to_origin(i)).max().unwrap_or(0);
    for r in 1..=max_r {
        out.push(IncreasingFn::Count(lattice.sites().filter(|&i| lattice.distance_to_origin(i) <= r).collect()));
    }
    let mut rng = RngStream::new(seed, 0).rng();
    let n = lattice.len();
    for k in 0..random_sets {
        let mut set: Vec<Site> = lattice.sites().filter(|_| rng.random::<bool>()).collect();
        if set.is_empty() {
            set.push(rng.random_range(0..n));
        }
        out.push(match k % 3 {
            0 => IncreasingFn::Count(set),
            1 => IncreasingFn::AllOf(set.into_iter().take(3).collect()),
            _ => IncreasingFn::AnyOf(set),
        });
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct DominationMcRow {
    pub function: String,
    pub mean_lower: f64,
    pub mean_upper: f64,
    pub z: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DominationMcReport {
    pub level: f64,
    pub critical_z: f64,
    pub rows: Vec<DominationMcRow>,
    pub violations: usize,
    pub caveat: &'static str,
}

/// One-sided tests of `E_lower[f] ≤ E_upper[f]` over the battery, Bonferroni-corrected at `level`.
pub fn domination_mc(lower: &[Config], upper: &[Config], battery: &[IncreasingFn], level: f64) -> Result<DominationMcReport> {
    if lower.len() < 2 || upper.len() < 2 {
        return Err(Error::InvalidParameter("each sample needs at least two configurations".into()));
    }
    let critical_z = normal_quantile(1.0 - level / battery.len().max(1) as f64);
    let stats = |xs: &[Config], f: &IncreasingFn| {
        let n = xs.len() as f64;
        let vals: Vec<f64> = xs.iter().map(|c| f.eval(c)).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var / n)
    };
    let rows: Vec<DominationMcRow> = battery
        .iter()
        .map(|f| {
            let (ma, va) = stats(lower, f);
            let (mb, vb) = stats(upper, f);
            let se = (va + vb).sqrt();
            let z = if se > 0.0 {
                (ma - mb) / se
            } else if ma > mb {
                f64::INFINITY
            } else {
                0.0
            };
            DominationMcRow { function: f.name(), mean_lower: ma, mean_upper: mb, z, violated: z > critical_z }
        })
        .collect();
    let violations = rows.iter().filter(|r| r.violated).count();
    Ok(DominationMcReport {
        level,
        critical_z,
        rows,
        violations,
        caveat: "passing these tests is necessary for domination, not sufficient",
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingMode {
    /// Shared clocks, with the special-bond move of the upper path tied to the
    /// lower path's moves into the empty special site during a mismatch.
    Ordered,
    /// Shared clocks only.
    Naive,
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingOutcome {
    pub violations: u64,
    pub events: u64,
    pub mismatch_entries: u64,
    /// `(time, lower, upper)` at the first order violation.
    pub first_violation: Option<(f64, String, String)>,
    pub lower: Config,
    pub upper: Config,
}

/// A directed move `from → to` (exchange) or a flip at `to` (`from == None`).
#[derive(Debug, Clone, Copy)]
struct Clock {
    from: Option<Site>,
    to: Site,
    birth: bool,
    rate: f64,
}

fn clocks(spec: &GeneratorSpec, w: &SiteWeights) -> Vec<Clock> {
    let lat = spec.lattice();
    let kappa = spec.kappa();
    let bond = spec.special_bond();
    let beta = match spec.model() {
        Model::BetaBond { beta } => beta,
        _ => 1.0,
    };
    let mut out = Vec::new();
    for &(i, j) in lat.bonds() {
        let base = if Some((i, j)) == bond { beta } else { 1.0 };
        out.push(Clock { from: Some(i), to: j, birth: false, rate: base * w.factor(j) / w.factor(i) });
        out.push(Clock { from: Some(j), to: i, birth: false, rate: base * w.factor(i) / w.factor(j) });
    }
    for k in lat.sites() {
        let m = lat.outside_neighbors(k) as f64;
        if m > 0.0 {
            out.push(Clock { from: None, to: k, birth: true, rate: m / kappa * w.factor(k) });
            out.push(Clock { from: None, to: k, birth: false, rate: m * kappa / w.factor(k) });
        }
    }
    out
}

fn fire(spec: &GeneratorSpec, c: &Config, clk: &Clock) -> Option<Config> {
    let next = match clk.from {
        Some(i) if c.get(i) && !c.get(clk.to) => c.exchange(i, clk.to),
        Some(_) => return None,
        None if clk.birth && !c.get(clk.to) => c.flip(clk.to),
        None if !clk.birth && c.get(clk.to) => c.flip(clk.to),
        None => return None,
    };
    (!spec.in_pattern(&next)).then_some(next)
}

/// Special site `s` occupied in the upper path and empty in the lower path,
/// with the other special site empty in both.
fn mismatch(lower: &Config, upper: &Config, bond: (Site, Site)) -> Option<(Site, Site)> {
    for (s, sp) in [bond, (bond.1, bond.0)] {
        if upper.get(s) && !lower.get(s) && !upper.get(sp) && !lower.get(sp) {
            return Some((s, sp));
        }
    }
    None
}

/// Couples two copies of the ψ-transformed β-bond chain started from `lower ≼ upper`
/// and counts the events after which the order fails.
pub fn coupled_pair(
    spec: &GeneratorSpec,
    w: &SiteWeights,
    lower: &Config,
    upper: &Config,
    horizon: f64,
    mode: CouplingMode,
    rng: &mut ChaCha8Rng,
) -> Result<CouplingOutcome> {
    let bond = spec
        .special_bond()
        .filter(|_| matches!(spec.model(), Model::BetaBond { .. }))
        .ok_or_else(|| Error::InvalidParameter("coupling needs the beta-bond model".into()))?;
    if !lower.leq(upper)? {
        return Err(Error::InvalidParameter("initial pair is not ordered".into()));
    }
    if spec.in_pattern(lower) || spec.in_pattern(upper) {
        return Err(Error::InPattern("initial pair must lie off the pattern".into()));
    }
    let base = clocks(spec, w);
    let (mut lo, mut up) = (lower.clone(), upper.clone());
    let mut t = 0.0;
    let mut out = CouplingOutcome { violations: 0, events: 0, mismatch_entries: 0, first_violation: None, lower: lo.clone(), upper: up.clone() };
    let mut was_mismatch = false;
    loop {
        // (rate, lower clock, upper clock)
        let mut events: Vec<(f64, Option<Clock>, Option<Clock>)> = Vec::with_capacity(base.len() + 1);
        let mm = if mode == CouplingMode::Ordered { mismatch(&lo, &up, bond) } else { None };
        if mm.is_some() && !was_mismatch {
            out.mismatch_entries += 1;
        }
        was_mismatch = mm.is_some();
        match mm {
            None => events.extend(base.iter().map(|c| (c.rate, Some(*c), Some(*c)))),
            Some((s, sp)) => {
                let special = base.iter().find(|c| c.from == Some(s) && c.to == sp).copied().unwrap();
                let mut alpha = 0.0;
                for c in &base {
                    if c.from == Some(s) && c.to == sp {
                        continue;
                    }
                    let into_sp = c.to == sp && (c.from.is_some() || c.birth);
                    if into_sp && fire(spec, &lo, c).is_some() {
                        alpha += c.rate;
                        events.push((c.rate, Some(*c), Some(special)));
                    } else {
                        events.push((c.rate, Some(*c), Some(*c)));
                    }
                }
                if alpha > special.rate * (1.0 + 1e-12) {
                    return Err(Error::InvalidParameter(format!(
                        "lower rate {alpha} into the special site exceeds the special bond rate {}",
                        special.rate
                    )));
                }
                events.push(((special.rate - alpha).max(0.0), None, Some(special)));
            }
        }
        let total: f64 = events.iter().map(|e| e.0).sum();
        let dt = exp_sample(rng, total);
        if t + dt >= horizon {
            break;
        }
        t += dt;
        out.events += 1;
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = events.len() - 1;
        for (k, e) in events.iter().enumerate() {
            if pick < e.0 {
                chosen = k;
                break;
            }
            pick -= e.0;
        }
        let (_, cl, cu) = events[chosen];
        if let Some(next) = cl.and_then(|c| fire(spec, &lo, &c)) {
            lo = next;
        }
        if let Some(next) = cu.and_then(|c| fire(spec, &up, &c)) {
            up = next;
        }
        if !lo.leq(&up)? {
            out.violations += 1;
            if out.first_violation.is_none() {
                out.first_violation = Some((t, lo.to_string(), up.to_string()));
            }
        }
    }
    out.lower = lo;
    out.upper = up;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingReport {
    pub mode: CouplingMode,
    pub trials: usize,
    pub violating_trials: usize,
    pub total_violations: u64,
    pub mismatch_entries: u64,
    pub first_violation: Option<(f64, String, String)>,
}

/// Random ordered pair: upper from `ν_ρ` off the pattern, lower by deleting
/// each particle of the upper one with probability 1/2.
pub fn random_ordered_pair(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Result<(Config, Config)> {
    let upper = draw_initial(spec, rng)?;
    let mut lower = upper.clone();
    for i in upper.occupied().collect::<Vec<_>>() {
        if rng.random::<bool>() {
            lower.set(i, false);
        }
    }
    Ok((lower, upper))
}

pub fn coupling_trials(spec: &GeneratorSpec, w: &SiteWeights, horizon: f64, trials: usize, seed: u64, mode: CouplingMode) -> Result<CouplingReport> {
    let outs: Vec<CouplingOutcome> = (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(seed, k).rng();
            let (lo, up) = random_ordered_pair(spec, &mut rng)?;
            coupled_pair(spec, w, &lo, &up, horizon, mode, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(CouplingReport {
        mode,
        trials,
        violating_trials: outs.iter().filter(|o| o.violations > 0).count(),
        total_violations: outs.iter().map(|o| o.violations).sum(),
        mismatch_entries: outs.iter().map(|o| o.mismatch_entries).sum(),
        first_violation: outs.iter().find_map(|o| o.first_violation.clone()),
    })
}

/// Uncoupled trajectory of the ψ-transformed chain.
pub fn psi_path(spec: &GeneratorSpec, w: &SiteWeights, init: &Config, horizon: f64, rng: &mut ChaCha8Rng) -> Result<Config> {
    if spec.in_pattern(init) || w.vanishes(init) {
        return Err(Error::InPattern(init.to_string()));
    }
    let rates = |c: &Config| psi_transitions(spec, w, c).expect("ψ-chain stays off the pattern");
    Ok(simulate_chain(init, horizon, rng, &rates, &mut |_, _| {}).state)
}

#[derive(Debug, Clone, Serialize)]
pub struct YaglomRow {
    pub site: Site,
    pub coords: Vec<i32>,
    pub alpha: f64,
    pub rho: f64,
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// The interval meets `[α_i, ρ]`.
    pub consistent: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct YaglomReport {
    pub t: f64,
    pub attempted: usize,
    pub accepted: usize,
    pub rows: Vec<YaglomRow>,
    pub pass: bool,
}

/// Conditioned site marginals at time `t` against `α_i ≤ m_i ≤ ρ`, off the pattern sites.
pub fn yaglom_compare(spec: &GeneratorSpec, w: &SiteWeights, t: f64, attempts: usize, seed: u64) -> Result<YaglomReport> {
    let sample = conditioned_sample(spec, t, attempts, seed)?;
    let lat = spec.lattice();
    let rows: Vec<YaglomRow> = empirical_marginals(&sample.samples, spec.width())
        .into_iter()
        .filter(|e| !spec.pattern().is_some_and(|p| p.involves(e.site)))
        .map(|e| {
            let alpha = w.alpha(e.site);
            YaglomRow {
                site: e.site,
                coords: lat.coords(e.site).unwrap().to_vec(),
                alpha,
                rho: spec.rho(),
                mean: e.mean,
                ci_lo: e.ci_lo,
                ci_hi: e.ci_hi,
                consistent: e.ci_hi >= alpha && e.ci_lo <= spec.rho(),
            }
        })
        .collect();
    let pass = rows.iter().all(|r| r.consistent);
    Ok(YaglomReport { t, attempted: sample.attempted, accepted: sample.samples.len(), rows, pass })
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}
