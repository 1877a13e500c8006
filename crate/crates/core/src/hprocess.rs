//! The process conditioned to avoid the pattern forever: Doob transform by the
//! principal eigenfunction `u`, its invariant law `μ̂ = u²ν/∫u²dν`, and exact
//! finite-`t` gaps for the limit laws of surviving trajectories.
//!
//! `μ = uν/∫u dν` is the Yaglom (endpoint) law; `μ̂` is the interior law.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::{DistVec, RateMatrix, SpectralResult, StateSpace};
use crate::generators::hprocess_transitions;
use crate::lattice::Config;
use crate::montecarlo::{simulate_chain, RngStream};

#[derive(Debug, Clone)]
pub struct HProcess {
    space: StateSpace,
    lambda: f64,
    u: Vec<f64>,
    mu: DistVec,
    mu_hat: DistVec,
    killed: RateMatrix,
    rates: RateMatrix,
}

impl HProcess {
    pub fn build(space: &StateSpace, spectral: &SpectralResult) -> Result<Self> {
        if spectral.u.len() != space.len() {
            return Err(Error::InvalidParameter("eigenfunction length differs from the state space".into()));
        }
        if let Some(i) = spectral.u.iter().position(|&x| !(x > 0.0)) {
            return Err(Error::ZeroWeight(space.config(i).to_string()));
        }
        let u = spectral.u.clone();
        let nu = space.nu();
        let mu = DistVec::new(u.iter().zip(nu).map(|(a, b)| a * b).collect()).normalized();
        let mu_hat = DistVec::new(u.iter().zip(nu).map(|(a, b)| a * a * b).collect()).normalized();
        let killed = RateMatrix::killed_generator(space);
        let spec = space.spec().clone();
        let lookup = {
            let space = space.clone();
            let u = u.clone();
            move |c: &Config| space.index_of(c).map_or(0.0, |i| u[i])
        };
        let rates = RateMatrix::build(space, move |c| hprocess_transitions(&spec, &lookup, c).expect("state off the pattern with u > 0"));
        Ok(Self { space: space.clone(), lambda: spectral.lambda, u, mu, mu_hat, killed, rates })
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    /// Endpoint law `u dν/∫u dν`.
    pub fn mu(&self) -> &DistVec {
        &self.mu
    }

    /// Interior law `u² dν/∫u² dν`.
    pub fn mu_hat(&self) -> &DistVec {
        &self.mu_hat
    }

    pub fn rates(&self) -> &RateMatrix {
        &self.rates
    }

    pub fn killed(&self) -> &RateMatrix {
        &self.killed
    }

    /// Largest relative violation of `μ̂(x) r(x,y) = μ̂(y) r(y,x)`.
    pub fn reversibility_defect(&self) -> f64 {
        let n = self.space.len();
        let p = &self.mu_hat.weights;
        let rate = |x: usize, y: usize| -> f64 { self.rates.row(x).filter(|&(z, _)| z == y).map(|(_, r)| r).sum() };
        let mut worst: f64 = 0.0;
        for x in 0..n {
            for (y, _) in self.rates.row(x) {
                let (a, b) = (p[x] * rate(x, y), p[y] * rate(y, x));
                worst = worst.max((a - b).abs() / a.max(b));
            }
        }
        worst
    }

    /// Largest `|Σ_y r_u(x,y) − (exit(x) − λ)|` relative to the exit rate.
    pub fn conservation_defect(&self) -> f64 {
        (0..self.space.len())
            .map(|x| {
                let out: f64 = self.rates.row(x).map(|(_, r)| r).sum();
                let exit = -self.killed.diag()[x];
                (out - (exit - self.lambda)).abs() / exit.max(1.0)
            })
            .fold(0.0, f64::max)
    }

    /// `‖μ̂ Q‖₁` for the h-generator `Q`.
    pub fn stationarity_defect(&self) -> f64 {
        self.rates.apply_transpose(&self.mu_hat.weights).iter().map(|x| x.abs()).sum()
    }

    /// `max |e^{λt} S̄_t u − u| / max u`.
    pub fn eigenfunction_defect(&self, t: f64) -> f64 {
        let s = self.killed.expm_apply(&self.u, t, false).values;
        let scale = (self.lambda * t).exp();
        let umax = self.u.iter().fold(0.0, |m: f64, &x| m.max(x));
        s.iter().zip(&self.u).map(|(a, b)| (a * scale - b).abs()).fold(0.0, f64::max) / umax
    }

    fn semigroup(&self, f: &[f64], t: f64) -> Vec<f64> {
        self.killed.expm_apply(f, t, false).values
    }

    fn survival(&self, t: f64) -> f64 {
        self.space.integrate(&self.semigroup(&vec![1.0; self.space.len()], t))
    }
}

fn times(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleRow {
    pub t: f64,
    pub expectation: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleReport {
    pub rows: Vec<MartingaleRow>,
    pub tolerance: f64,
    pub pass: bool,
}

pub const MARTINGALE_TOL: f64 = 1e-10;

/// `E_ν[Z_t] = e^{λt}⟨u, S̄_t u⟩_ν / ∫u² dν` on a grid.
pub fn martingale_check(hp: &HProcess, grid: &[f64]) -> MartingaleReport {
    let norm = hp.space.inner(&hp.u, &hp.u);
    let rows: Vec<MartingaleRow> = grid
        .iter()
        .map(|&t| {
            let e = (hp.lambda * t).exp() * hp.space.inner(&hp.u, &hp.semigroup(&hp.u, t)) / norm;
            MartingaleRow { t, expectation: e, deviation: (e - 1.0).abs() }
        })
        .collect();
    let pass = rows.iter().all(|r| r.deviation <= MARTINGALE_TOL);
    MartingaleReport { rows, tolerance: MARTINGALE_TOL, pass }
}

/// Pair of test functions on the states.
#[derive(Debug, Clone, Serialize)]
pub struct Probe {
    pub name: String,
    #[serde(skip)]
    pub f: Vec<f64>,
    #[serde(skip)]
    pub g: Vec<f64>,
}

/// Constants, single-site indicators and two-site products.
pub fn standard_probes(space: &StateSpace) -> Vec<Probe> {
    let n = space.len();
    let width = space.width();
    let ind = |s: usize| -> Vec<f64> { (0..n).map(|i| (space.codes()[i] >> s & 1) as f64).collect() };
    let mut out = vec![Probe { name: "1,1".into(), f: vec![1.0; n], g: vec![1.0; n] }];
    for s in 0..width {
        out.push(Probe { name: format!("eta({s}),1"), f: ind(s), g: vec![1.0; n] });
        out.push(Probe { name: format!("1,eta({s})"), f: vec![1.0; n], g: ind(s) });
    }
    for s in 0..width {
        let t = (s + 1) % width;
        out.push(Probe { name: format!("eta({s}),eta({t})"), f: ind(s), g: ind(t) });
    }
    out
}

/// `E_ν[f(η_a) g(η_{a+r}) 1{τ>t}] / P_ν(τ>t)`.
pub fn two_time_conditioned(hp: &HProcess, f: &[f64], g: &[f64], a: f64, r: f64, t: f64) -> f64 {
    let ones = vec![1.0; hp.space.len()];
    let tail = hp.semigroup(&ones, t - a - r);
    let inner = hp.semigroup(&times(g, &tail), r);
    let outer = hp.semigroup(&times(f, &inner), a);
    hp.space.integrate(&outer) / hp.survival(t)
}

/// Two-point function of the stationary h-process: `e^{λr}⟨fu, S̄_r(gu)⟩_ν / ∫u²dν`.
pub fn stationary_two_point(hp: &HProcess, f: &[f64], g: &[f64], r: f64) -> f64 {
    let gu = times(g, &hp.u);
    let fu = times(f, &hp.u);
    (hp.lambda * r).exp() * hp.space.inner(&fu, &hp.semigroup(&gu, r)) / hp.space.inner(&hp.u, &hp.u)
}

/// Two-point function of the h-process started from `μ`: `e^{λr}⟨f, S̄_r(gu)⟩_ν / ∫u dν`.
pub fn initial_two_point(hp: &HProcess, f: &[f64], g: &[f64], r: f64) -> f64 {
    let gu = times(g, &hp.u);
    (hp.lambda * r).exp() * hp.space.inner(f, &hp.semigroup(&gu, r)) / hp.space.integrate(&hp.u)
}

fn mean(p: &DistVec, f: &[f64]) -> f64 {
    p.weights.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() / p.mass()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LimitKind {
    /// Window `[a_t, a_t + r]` against the stationary h-process.
    Window,
    /// Times `a_t < b_t` in the bulk against the `μ̂` product.
    Interior,
    /// Times `0` and `t` against the `μ` product.
    Endpoint,
    /// Window `[0, r]` against the h-process started from `μ`.
    InitialWindow,
    /// Window `[t − r, t]` against the time reversal of the initial window limit.
    FinalWindow,
}

impl LimitKind {
    pub fn key(self) -> &'static str {
        match self {
            Self::Endpoint => "endpoint",
            Self::Window => "window",
            Self::Interior => "interior",
            Self::InitialWindow => "initial-window",
            Self::FinalWindow => "final-window",
        }
    }
}

/// Conditioned value and its limit for one probe at one `t`.
pub fn limit_pair(hp: &HProcess, kind: LimitKind, p: &Probe, t: f64, r: f64) -> Result<(f64, f64)> {
    let need = |ok: bool| {
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("window r={r} does not fit in [0, {t}]")))
        }
    };
    Ok(match kind {
        LimitKind::Window => {
            need(r < t)?;
            let a = (t - r) / 2.0;
            (two_time_conditioned(hp, &p.f, &p.g, a, r, t), stationary_two_point(hp, &p.f, &p.g, r))
        }
        LimitKind::Interior => {
            let (a, b) = (t / 3.0, 2.0 * t / 3.0);
            (two_time_conditioned(hp, &p.f, &p.g, a, b - a, t), mean(&hp.mu_hat, &p.f) * mean(&hp.mu_hat, &p.g))
        }
        LimitKind::Endpoint => (two_time_conditioned(hp, &p.f, &p.g, 0.0, t, t), mean(&hp.mu, &p.f) * mean(&hp.mu, &p.g)),
        LimitKind::InitialWindow => {
            need(r <= t)?;
            (two_time_conditioned(hp, &p.f, &p.g, 0.0, r, t), initial_two_point(hp, &p.f, &p.g, r))
        }
        LimitKind::FinalWindow => {
            need(r <= t)?;
            (two_time_conditioned(hp, &p.f, &p.g, t - r, r, t), initial_two_point(hp, &p.g, &p.f, r))
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GapRow {
    pub t: f64,
    pub lambda_t: f64,
    pub gaps: Vec<f64>,
    pub max_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapReport {
    pub key: &'static str,
    pub kind: LimitKind,
    pub r: f64,
    pub probes: Vec<String>,
    pub rows: Vec<GapRow>,
    pub monotone: bool,
    pub final_gap: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Absolute gaps below this level count as converged when checking monotone decay.
const GAP_NOISE: f64 = 1e-12;

/// Gap table over `t = m/λ` for each multiple `m`.
pub fn gap_report(hp: &HProcess, kind: LimitKind, probes: &[Probe], r: f64, lambda_multiples: &[f64], threshold: f64) -> Result<GapReport> {
    let rows: Vec<GapRow> = lambda_multiples
        .iter()
        .map(|&m| {
            let t = m / hp.lambda;
            let gaps = probes
                .iter()
                .map(|p| limit_pair(hp, kind, p, t, r).map(|(a, b)| (a - b).abs()))
                .collect::<Result<Vec<_>>>()?;
            let max_gap = gaps.iter().copied().fold(0.0, f64::max);
            Ok(GapRow { t, lambda_t: m, gaps, max_gap })
        })
        .collect::<Result<_>>()?;
    let monotone = rows.windows(2).all(|w| w[1].max_gap <= w[0].max_gap.max(GAP_NOISE));
    let final_gap = rows.last().map_or(f64::INFINITY, |r| r.max_gap);
    let pass = monotone && final_gap < threshold;
    Ok(GapReport { key: kind.key(), kind, r, probes: probes.iter().map(|p| p.name.clone()).collect(), rows, monotone, final_gap, threshold, pass })
}

#[derive(Debug, Clone, Serialize)]
pub struct DistinguishingProbe {
    pub probe: String,
    pub mu_mean: f64,
    pub mu_hat_mean: f64,
    pub difference: f64,
    pub found: bool,
}

/// Site indicator with the largest `|∫f dμ − ∫f dμ̂|`.
pub fn distinguishing_probe(hp: &HProcess) -> DistinguishingProbe {
    let n = hp.space.len();
    let mut best = DistinguishingProbe { probe: String::new(), mu_mean: 0.0, mu_hat_mean: 0.0, difference: 0.0, found: false };
    for s in 0..hp.space.width() {
        let f: Vec<f64> = (0..n).map(|i| (hp.space.codes()[i] >> s & 1) as f64).collect();
        let (a, b) = (mean(&hp.mu, &f), mean(&hp.mu_hat, &f));
        if (a - b).abs() > best.difference {
            best = DistinguishingProbe { probe: format!("eta({s})"), mu_mean: a, mu_hat_mean: b, difference: (a - b).abs(), found: false };
        }
    }
    best.found = best.difference > 1e-8;
    best
}

#[derive(Debug, Clone, Serialize)]
pub struct OccupationReport {
    pub trials: usize,
    pub horizon: f64,
    pub events: u64,
    pub total_variation: f64,
    pub entered_pattern: bool,
}

/// Occupation measure of h-process trajectories started from `μ̂`, compared with `μ̂`.
pub fn simulate_hprocess(hp: &HProcess, horizon: f64, trials: usize, seed: u64) -> Result<OccupationReport> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
    }
    let n = hp.space.len();
    let spec = hp.space.spec();
    let lookup = |c: &Config| hp.space.index_of(c).map_or(0.0, |i| hp.u[i]);
    let cumulative: Vec<f64> = hp
        .mu_hat
        .weights
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect();
    let runs: Vec<(Vec<f64>, u64, bool)> = (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(seed, k).rng();
            let x: f64 = rng.random::<f64>() * cumulative[n - 1];
            let start = cumulative.partition_point(|&c| c <= x).min(n - 1);
            let mut occ = vec![0.0; n];
            let mut left = false;
            let rates = |c: &Config| hprocess_transitions(spec, lookup, c).expect("h-process stays off the pattern");
            let out = simulate_chain(&hp.space.config(start), horizon, &mut rng, &rates, &mut |c, dt| match hp.space.index_of(c) {
                Some(i) => occ[i] += dt,
                None => left = true,
            });
            (occ, out.events, left || out.tau.is_some())
        })
        .collect();
    let mut occ = vec![0.0; n];
    let mut events = 0;
    let mut entered = false;
    for (o, e, l) in runs {
        occ.iter_mut().zip(&o).for_each(|(a, b)| *a += b);
        events += e;
        entered |= l;
    }
    let total: f64 = occ.iter().sum();
    let tv = 0.5 * occ.iter().zip(&hp.mu_hat.weights).map(|(a, b)| (a / total - b).abs()).sum::<f64>();
    Ok(OccupationReport { trials, horizon, events, total_variation: tv, entered_pattern: entered })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::principal_dirichlet;
    use crate::generators::GeneratorSpec;

    fn three_site() -> HProcess {
        let space = StateSpace::new(&GeneratorSpec::ssep_a1(1, 1, 0.5).unwrap()).unwrap();
        let sp = principal_dirichlet(&space).unwrap();
        HProcess::build(&space, &sp).unwrap()
    }

    #[test]
    fn single_state_has_no_moves() {
        let space = StateSpace::new(&GeneratorSpec::ssep_a1(1, 0, 0.5).unwrap()).unwrap();
        let sp = principal_dirichlet(&space).unwrap();
        let hp = HProcess::build(&space, &sp).unwrap();
        assert_eq!(hp.rates().row(0).count(), 0);
        assert!(hp.conservation_defect() < 1e-12);
    }

    #[test]
    fn identities_on_three_sites() {
        let hp = three_site();
        assert!(hp.reversibility_defect() < 1e-12);
        assert!(hp.conservation_defect() < 1e-10);
        assert!(hp.stationarity_defect() < 1e-10);
        assert!(hp.eigenfunction_defect(3.0) < 1e-10);
        assert!(martingale_check(&hp, &[0.0, 1.0, 10.0]).pass);
    }

    #[test]
    fn constant_probe_is_exact() {
        let hp = three_site();
        let n = hp.space().len();
        let p = Probe { name: "1,1".into(), f: vec![1.0; n], g: vec![1.0; n] };
        for kind in [LimitKind::Window, LimitKind::Interior, LimitKind::Endpoint, LimitKind::InitialWindow, LimitKind::FinalWindow] {
            let (a, b) = limit_pair(&hp, kind, &p, 5.0, 1.0).unwrap();
            assert!((a - 1.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12, "{kind:?}");
        }
    }

    #[test]
    fn endpoint_and_interior_laws_differ() {
        assert!(distinguishing_probe(&three_site()).found);
    }
}
