//! Exhaustive finite-state computations.
//!
//! States are the configurations off the pattern (all of them for the
//! birth-death model), enumerated in increasing packed-code order. Integrals
//! `∫·dν` are sums against the product Bernoulli(ρ) weights of the enumerated
//! states, so `ν` keeps its full-space normalisation and `ν(A^c) < 1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::FlowNetwork;
use crate::generators::{potential_v_unchecked, psi_transitions, transitions, GeneratorSpec, Model, TransitionList};
use crate::harmonic::{PsiForm, SiteWeights};
use crate::lattice::{enumerate_monotone_functions, Config, Site};

/// Hard cap on the number of enumerated states.
pub const STATE_CAP: u128 = 1 << 24;
pub const DOMINATION_SITE_CAP: usize = 14;
pub const MONOTONE_SITE_CAP: usize = 6;
pub const ENUMERATION_SITE_CAP: usize = 5;
pub const EXHAUSTIVE_V_SITE_CAP: usize = 24;
/// Width up to which [`VCheckMode::Auto`] runs the exhaustive check.
pub const AUTO_EXHAUSTIVE_SITES: usize = 20;

#[derive(Debug, Clone)]
pub struct StateSpace {
    spec: GeneratorSpec,
    codes: Vec<u64>,
    nu: Vec<f64>,
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

impl StateSpace {
    pub fn new(spec: &GeneratorSpec) -> Result<Self> {
        Self::with_cap(spec, STATE_CAP)
    }

    /// Number of states the enumeration would produce.
    pub fn count_states(spec: &GeneratorSpec) -> u128 {
        let w = spec.width();
        match spec.pattern() {
            None => 1u128 << w.min(127),
            Some(p) => {
                let ps = p.sites().len();
                let below: u128 = (0..ps.min(p.threshold() as usize)).map(|j| binomial(ps, j)).sum();
                (1u128 << (w - ps).min(127)) * below
            }
        }
    }

    pub fn with_cap(spec: &GeneratorSpec, cap: u128) -> Result<Self> {
        let count = Self::count_states(spec);
        if count > cap {
            return Err(Error::CapExceeded { what: "states", size: count, cap });
        }
        let w = spec.width();
        let codes: Vec<u64> = match spec.pattern() {
            None => (0..1u64 << w).collect(),
            Some(p) => {
                let mask: u64 = p.sites().iter().map(|&i| 1u64 << i).sum();
                let k = p.threshold();
                (0..1u64 << w).filter(|c| (c & mask).count_ones() < k).collect()
            }
        };
        let rho = spec.rho();
        let (l1, l0) = (rho.ln(), (1.0 - rho).ln());
        let nu = codes
            .iter()
            .map(|c| {
                let k = c.count_ones() as f64;
                (k * l1 + (w as f64 - k) * l0).exp()
            })
            .collect();
        Ok(Self { spec: spec.clone(), codes, nu })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn width(&self) -> usize {
        self.spec.width()
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[u64] {
        &self.codes
    }

    pub fn config(&self, i: usize) -> Config {
        Config::from_code(self.codes[i], self.width())
    }

    pub fn index_of_code(&self, code: u64) -> Option<usize> {
        self.codes.binary_search(&code).ok()
    }

    pub fn index_of(&self, c: &Config) -> Option<usize> {
        c.code().and_then(|code| self.index_of_code(code))
    }

    /// Product Bernoulli(ρ) weights of the states.
    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn nu_mass(&self) -> f64 {
        self.nu.iter().sum()
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.nu).map(|(a, b)| a * b).sum()
    }

    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter().zip(g).zip(&self.nu).map(|((a, b), n)| a * b * n).sum()
    }

    /// `ν` restricted to the states, unnormalised.
    pub fn nu_dist(&self) -> DistVec {
        DistVec::new(self.nu.clone())
    }

    /// Distribution proportional to `ψ dν` on the states.
    pub fn psi_dist(&self, w: &SiteWeights) -> DistVec {
        let v = (0..self.len()).map(|i| w.psi(&self.config(i)) * self.nu[i]).collect();
        DistVec::new(v).normalized()
    }

    /// Site occupation probabilities under a distribution on the states.
    pub fn site_marginals(&self, p: &DistVec) -> Vec<f64> {
        let mass = p.mass();
        let mut m = vec![0.0; self.width()];
        for (i, &code) in self.codes.iter().enumerate() {
            for (s, ms) in m.iter_mut().enumerate() {
                if code >> s & 1 == 1 {
                    *ms += p.weights[i];
                }
            }
        }
        m.iter_mut().for_each(|v| *v /= mass);
        m
    }
}

/// Weight vector indexed by the states of a [`StateSpace`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistVec {
    pub weights: Vec<f64>,
}

impl DistVec {
    pub fn new(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    pub fn point(len: usize, at: usize) -> Self {
        let mut w = vec![0.0; len];
        w[at] = 1.0;
        Self { weights: w }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn normalized(&self) -> Self {
        let m = self.mass();
        Self { weights: self.weights.iter().map(|w| w / m).collect() }
    }

    pub fn is_normalized(&self) -> bool {
        (self.mass() - 1.0).abs() <= 1e-12
    }

    pub fn l1_distance(&self, other: &DistVec) -> f64 {
        self.weights.iter().zip(&other.weights).map(|(a, b)| (a - b).abs()).sum()
    }
}

/// Sparse operator `M = offdiag + diag` restricted to a state space.
#[derive(Debug, Clone)]
pub struct RateMatrix {
    row_ptr: Vec<usize>,
    col: Vec<u32>,
    val: Vec<f64>,
    diag: Vec<f64>,
    t_row_ptr: Vec<usize>,
    t_col: Vec<u32>,
    t_val: Vec<f64>,
}

/// Result of applying a matrix exponential.
#[derive(Debug, Clone)]
pub struct Evolved {
    pub values: Vec<f64>,
    /// Bound on the truncation error in the sup norm (ℓ¹ for forward evolution).
    pub error_bound: f64,
}

/// Poisson mean handled per uniformisation chunk.
const CHUNK_MEAN: f64 = 200.0;
const TRUNCATION_REL: f64 = 1e-14;

impl RateMatrix {
    /// Moves whose target lies outside the space count only in the diagonal.
    /// A potential in the transition list is added to the diagonal.
    pub fn build(space: &StateSpace, f: impl Fn(&Config) -> TransitionList + Sync) -> Self {
        let rows: Vec<(Vec<(u32, f64)>, f64)> = (0..space.len())
            .into_par_iter()
            .map(|i| {
                let c = space.config(i);
                let list = f(&c);
                let mut out = Vec::with_capacity(list.len());
                let mut total = 0.0;
                for t in &list.transitions {
                    total += t.rate;
                    if let Some(j) = space.index_of(&t.target) {
                        out.push((j as u32, t.rate));
                    }
                }
                (out, -total + list.potential.unwrap_or(0.0))
            })
            .collect();
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col = Vec::new();
        let mut val = Vec::new();
        let mut diag = Vec::with_capacity(n);
        let mut in_degree = vec![0usize; n];
        row_ptr.push(0);
        for (r, d) in rows {
            for (j, v) in r {
                col.push(j);
                val.push(v);
                in_degree[j as usize] += 1;
            }
            row_ptr.push(col.len());
            diag.push(d);
        }
        let mut t_row_ptr = vec![0usize; n + 1];
        for j in 0..n {
            t_row_ptr[j + 1] = t_row_ptr[j] + in_degree[j];
        }
        let mut fill = t_row_ptr.clone();
        let mut t_col = vec![0u32; col.len()];
        let mut t_val = vec![0.0; col.len()];
        for i in 0..n {
            for e in row_ptr[i]..row_ptr[i + 1] {
                let j = col[e] as usize;
                t_col[fill[j]] = i as u32;
                t_val[fill[j]] = val[e];
                fill[j] += 1;
            }
        }
        Self { row_ptr, col, val, diag, t_row_ptr, t_col, t_val }
    }

    /// Generator stopped on the pattern (plain generator for the birth-death model).
    pub fn killed_generator(space: &StateSpace) -> Self {
        let spec = space.spec().clone();
        Self::build(space, move |c| transitions(&spec, c))
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |e| (self.col[e] as usize, self.val[e]))
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.t_row_ptr[j]..self.t_row_ptr[j + 1]).map(move |e| (self.t_col[e] as usize, self.t_val[e]))
    }

    /// `(M f)(x)`
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|i| self.diag[i] * f[i] + self.row(i).map(|(j, v)| v * f[j]).sum::<f64>()).collect()
    }

    /// `(p M)(y)`
    pub fn apply_transpose(&self, p: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|j| self.diag[j] * p[j] + self.column(j).map(|(i, v)| v * p[i]).sum::<f64>()).collect()
    }

    /// Largest `−diag`, the maximal total exit rate of a generator.
    pub fn max_exit(&self) -> f64 {
        self.diag.iter().map(|d| -d).fold(0.0, f64::max)
    }

    fn shift_and_rate(&self) -> (f64, f64) {
        let s = self.diag.iter().copied().fold(0.0, f64::max);
        let spread = self.diag.iter().map(|d| s - d).fold(0.0, f64::max);
        let theta = if spread > 0.0 { 1.1 * spread } else { 1.0 };
        (s, theta)
    }

    fn kernel_step(&self, v: &[f64], s: f64, theta: f64, transpose: bool) -> Vec<f64> {
        let mv = if transpose { self.apply_transpose(v) } else { self.apply(v) };
        v.iter().zip(mv).map(|(a, m)| a + (m - s * a) / theta).collect()
    }

    /// `e^{tM} v` (or `v e^{tM}` when `transpose`) by uniformisation.
    pub fn expm_apply(&self, v: &[f64], t: f64, transpose: bool) -> Evolved {
        let norm = |x: &[f64]| -> f64 {
            if transpose {
                x.iter().map(|a| a.abs()).sum()
            } else {
                x.iter().fold(0.0, |m, a| m.max(a.abs()))
            }
        };
        if t <= 0.0 {
            return Evolved { values: v.to_vec(), error_bound: 0.0 };
        }
        let (s, theta) = self.shift_and_rate();
        let pieces = (theta * t / CHUNK_MEAN).ceil().max(1.0) as usize;
        let dt = t / pieces as f64;
        let mean = theta * dt;
        let mut cur = v.to_vec();
        let mut rel_err = 0.0;
        for _ in 0..pieces {
            let mut term = cur.clone();
            let mut w = (-mean).exp();
            let mut acc: Vec<f64> = term.iter().map(|x| w * x).collect();
            let base = norm(&cur);
            let mut k = 0usize;
            loop {
                let next_w = w * mean / (k as f64 + 1.0);
                if (k as f64) + 2.0 > mean {
                    let tail = next_w / (1.0 - mean / (k as f64 + 2.0));
                    let a = norm(&acc);
                    if tail * base <= TRUNCATION_REL * a || a == 0.0 || tail * base < 1e-300 {
                        if a > 0.0 {
                            rel_err += tail * base / a;
                        }
                        break;
                    }
                }
                term = self.kernel_step(&term, s, theta, transpose);
                k += 1;
                w = next_w;
                for (x, y) in acc.iter_mut().zip(&term) {
                    *x += w * y;
                }
            }
            let scale = (s * dt).exp();
            cur = acc.into_iter().map(|x| x * scale).collect();
        }
        let error_bound = rel_err * norm(&cur);
        Evolved { values: cur, error_bound }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralResult {
    /// Decay rate (0 for the stationary problem of the birth-death dual).
    pub lambda: f64,
    /// Principal eigenfunction with `∫u dν = 1`.
    pub u: Vec<f64>,
    pub gap_estimate: f64,
    pub gap_converged: bool,
    pub iterations: usize,
    /// `‖(M + λ)u‖_∞ / ‖u‖_∞`
    pub residual: f64,
}

const POWER_MAX_ITER: usize = 2_000_000;
const RESIDUAL_TARGET: f64 = 1e-11;

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, a| m.max(a.abs()))
}

/// Principal Dirichlet eigenpair of the stopped generator.
pub fn principal_dirichlet(space: &StateSpace) -> Result<SpectralResult> {
    if space.spec().pattern().is_none() {
        return Err(Error::InvalidParameter("principal Dirichlet problem needs a pattern".into()));
    }
    let m = RateMatrix::killed_generator(space);
    principal_with(space, &m)
}

/// Power iteration on `I + M/Θ` with the `ν`-Rayleigh quotient.
pub fn principal_with(space: &StateSpace, m: &RateMatrix) -> Result<SpectralResult> {
    let n = space.len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty state space".into()));
    }
    let theta = 1.1 * m.max_exit().max(f64::MIN_POSITIVE);
    let mut v = vec![1.0; n];
    let mut prev = f64::NAN;
    let mut stable = 0;
    let mut lambda = 0.0;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < POWER_MAX_ITER {
        let lv = m.apply(&v);
        lambda = -space.inner(&v, &lv) / space.inner(&v, &v);
        if ((lambda - prev) / lambda).abs() < 1e-13 {
            stable += 1;
        } else {
            stable = 0;
        }
        prev = lambda;
        if stable >= 10 || iterations % 25 == 0 {
            residual = sup(&lv.iter().zip(&v).map(|(a, b)| a + lambda * b).collect::<Vec<_>>()) / sup(&v);
            if stable >= 10 && residual <= RESIDUAL_TARGET {
                break;
            }
        }
        let norm = space.inner(&v, &v).sqrt();
        v = v.iter().zip(&lv).map(|(a, b)| (a + b / theta) / norm).collect();
        iterations += 1;
    }
    if residual > RESIDUAL_TARGET {
        return Err(Error::NoConvergence { residual, iterations });
    }
    let z = space.integrate(&v);
    let u: Vec<f64> = v.iter().map(|x| x / z).collect();
    if let Some(i) = u.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::ZeroWeight(space.config(i).to_string()));
    }
    let (gap_estimate, gap_converged) = deflated_gap(space, m, &u, lambda);
    Ok(SpectralResult { lambda, u, gap_estimate, gap_converged, iterations, residual })
}

/// Rayleigh level of the `ν`-orthogonal complement of `u`, minus `λ`.
fn deflated_gap(space: &StateSpace, m: &RateMatrix, u: &[f64], lambda: f64) -> (f64, bool) {
    let n = space.len();
    if n < 2 {
        return (f64::INFINITY, true);
    }
    let theta = 2.0 * m.max_exit();
    let uu = space.inner(u, u);
    let project = |w: &mut Vec<f64>| {
        let c = space.inner(w, u) / uu;
        for (a, b) in w.iter_mut().zip(u) {
            *a -= c * b;
        }
        let norm = space.inner(w, w).sqrt();
        for a in w.iter_mut() {
            *a /= norm;
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    project(&mut w);
    let mut prev = f64::NAN;
    let mut stable = 0;
    let mut rq = f64::INFINITY;
    for _ in 0..200_000 {
        let lw = m.apply(&w);
        rq = -space.inner(&w, &lw);
        if ((rq - prev) / rq).abs() < 1e-12 {
            stable += 1;
            if stable >= 10 {
                return (rq - lambda, true);
            }
        } else {
            stable = 0;
        }
        prev = rq;
        w = w.iter().zip(&lw).map(|(a, b)| a + b / theta).collect();
        project(&mut w);
    }
    (rq - lambda, false)
}

/// Left principal eigenfunction `u*` (density of the left eigenvector with respect to `ν`).
pub fn principal_adjoint(space: &StateSpace, m: &RateMatrix) -> Result<Vec<f64>> {
    let theta = 1.1 * m.max_exit().max(f64::MIN_POSITIVE);
    let nu = space.nu();
    let mut p: Vec<f64> = nu.to_vec();
    for it in 0..POWER_MAX_ITER {
        let pm = m.apply_transpose(&p);
        let mass: f64 = p.iter().sum();
        let lambda = -pm.iter().sum::<f64>() / mass;
        if it % 25 == 0 {
            let dens: Vec<f64> = p.iter().zip(nu).map(|(a, b)| a / b).collect();
            let res: Vec<f64> = pm.iter().zip(&p).zip(nu).map(|((a, b), n)| (a + lambda * b) / n).collect();
            if sup(&res) / sup(&dens) <= RESIDUAL_TARGET {
                let z = space.integrate(&dens);
                return Ok(dens.into_iter().map(|x| x / z).collect());
            }
        }
        p = p.iter().zip(&pm).map(|(a, b)| (a + b / theta) / mass).collect();
    }
    Err(Error::NoConvergence { residual: f64::NAN, iterations: POWER_MAX_ITER })
}

/// Positive `u` with `L* u = 0` and `∫u dν = 1` for the birth-death model,
/// i.e. the density of the invariant law.
pub fn dual_principal_ab(space: &StateSpace) -> Result<SpectralResult> {
    if !matches!(space.spec().model(), Model::BirthDeath { .. }) {
        return Err(Error::InvalidParameter("dual eigenproblem is defined for the birth-death model".into()));
    }
    let m = RateMatrix::killed_generator(space);
    let theta = 1.1 * m.max_exit();
    let nu = space.nu();
    let mut p: Vec<f64> = nu.to_vec();
    let mut last_step = f64::NAN;
    let mut contraction = f64::NAN;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < POWER_MAX_ITER {
        let pm = m.apply_transpose(&p);
        if iterations % 10 == 0 {
            let dens: Vec<f64> = p.iter().zip(nu).map(|(a, b)| a / b).collect();
            let ls: Vec<f64> = pm.iter().zip(nu).map(|(a, b)| a / b).collect();
            residual = sup(&ls) / sup(&dens);
            if residual <= 1e-13 {
                break;
            }
        }
        let step = sup(&pm) / theta;
        if last_step.is_finite() && last_step > 0.0 && step > 0.0 {
            contraction = step / last_step;
        }
        last_step = step;
        let mass: f64 = p.iter().sum();
        p = p.iter().zip(&pm).map(|(a, b)| (a + b / theta) / mass).collect();
        iterations += 1;
    }
    if residual > 1e-13 {
        return Err(Error::NoConvergence { residual, iterations });
    }
    let mass: f64 = p.iter().sum();
    let u: Vec<f64> = p.iter().zip(nu).map(|(a, b)| a / b / mass).collect();
    let gap_estimate = if contraction.is_finite() { theta * (1.0 - contraction) } else { f64::INFINITY };
    Ok(SpectralResult { lambda: 0.0, u, gap_estimate, gap_converged: contraction.is_finite(), iterations, residual })
}

/// `(L* u)(x) = ν(x)^{-1} Σ_y ν(y) u(y) L(y, x)` for the full generator.
pub fn adjoint_apply(space: &StateSpace, m: &RateMatrix, u: &[f64]) -> Vec<f64> {
    let nu = space.nu();
    let p: Vec<f64> = u.iter().zip(nu).map(|(a, b)| a * b).collect();
    m.apply_transpose(&p).into_iter().zip(nu).map(|(a, b)| a / b).collect()
}

/// Strong connectivity of the transition graph.
pub fn is_irreducible(m: &RateMatrix) -> bool {
    let n = m.len();
    if n == 0 {
        return true;
    }
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        seen[0] = true;
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let next: Vec<usize> = if forward { m.row(i).map(|(j, _)| j).collect() } else { m.column(i).map(|(j, _)| j).collect() };
            for j in next {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

#[derive(Debug, Clone, Serialize)]
pub struct SurvivalPoint {
    pub t: f64,
    pub survival: f64,
    pub error_bound: f64,
}

/// Forward evolution `p_t = p_0 e^{tL̄}` along a nondecreasing grid.
pub fn evolve_grid(m: &RateMatrix, init: &DistVec, grid: &[f64]) -> Result<Vec<Evolved>> {
    let mut out = Vec::with_capacity(grid.len());
    let mut cur = init.weights.clone();
    let mut err = 0.0;
    let mut t_prev = 0.0;
    for &t in grid {
        if t < t_prev || !t.is_finite() {
            return Err(Error::InvalidParameter("time grid must be finite and nondecreasing from 0".into()));
        }
        let e = m.expm_apply(&cur, t - t_prev, true);
        err += e.error_bound;
        cur = e.values;
        out.push(Evolved { values: cur.clone(), error_bound: err });
        t_prev = t;
    }
    Ok(out)
}

/// `P_init(τ > t)` on a grid.
pub fn survival_grid(m: &RateMatrix, init: &DistVec, grid: &[f64]) -> Result<Vec<SurvivalPoint>> {
    Ok(evolve_grid(m, init, grid)?
        .into_iter()
        .zip(grid)
        .map(|(e, &t)| SurvivalPoint { t, survival: e.values.iter().sum(), error_bound: e.error_bound })
        .collect())
}

pub fn survival_exact(space: &StateSpace, init: &DistVec, t: f64) -> Result<f64> {
    let m = RateMatrix::killed_generator(space);
    Ok(survival_grid(&m, init, &[t])?[0].survival)
}

/// Law at time `t` conditioned on survival.
pub fn conditioned_law(space: &StateSpace, init: &DistVec, t: f64) -> Result<DistVec> {
    let m = RateMatrix::killed_generator(space);
    conditioned_law_with(&m, init, t)
}

pub fn conditioned_law_with(m: &RateMatrix, init: &DistVec, t: f64) -> Result<DistVec> {
    let p = m.expm_apply(&init.weights, t, true).values;
    let mass: f64 = p.iter().sum();
    if !(mass >= 1e-300) {
        return Err(Error::SurvivalUnderflow { t, mass });
    }
    Ok(DistVec::new(p.into_iter().map(|x| x / mass).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VCheckMode {
    Auto,
    /// Every state of the box.
    Exhaustive,
    /// All configurations of the sites that can influence the increment at
    /// each `k`, with an empty background.
    LocalWindow,
}

#[derive(Debug, Clone, Serialize)]
pub struct VCounterexample {
    pub state: String,
    pub site: Site,
    pub v_state: f64,
    pub v_flipped: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VCertificate {
    pub pass: bool,
    pub mode: VCheckMode,
    pub direction: Direction,
    pub comparisons: u64,
    pub min_slack: f64,
    pub counterexample: Option<VCounterexample>,
}

fn v_defined(spec: &GeneratorSpec, w: &SiteWeights, c: &Config) -> bool {
    !spec.in_pattern(c) && !w.vanishes(c)
}

fn slack(direction: Direction, v0: f64, v1: f64) -> (f64, f64) {
    let s = match direction {
        Direction::Increasing => v1 - v0,
        Direction::Decreasing => v0 - v1,
    };
    (s, 1e-10 * (1.0 + v0.abs() + v1.abs()))
}

struct VScan {
    comparisons: u64,
    min_slack: f64,
    worst: Option<(String, Site, f64, f64)>,
}

impl VScan {
    fn new() -> Self {
        Self { comparisons: 0, min_slack: f64::INFINITY, worst: None }
    }

    fn record(&mut self, direction: Direction, c: &Config, k: Site, v0: f64, v1: f64) {
        self.comparisons += 1;
        let (s, tol) = slack(direction, v0, v1);
        self.min_slack = self.min_slack.min(s);
        if s < -tol {
            let text = c.to_string();
            let better = match &self.worst {
                None => true,
                Some((t, kk, _, _)) => (&text, k) < (t, *kk),
            };
            if better {
                self.worst = Some((text, k, v0, v1));
            }
        }
    }

    fn merge(mut self, other: VScan) -> VScan {
        self.comparisons += other.comparisons;
        self.min_slack = self.min_slack.min(other.min_slack);
        if let Some(o) = other.worst {
            let better = match &self.worst {
                None => true,
                Some((t, k, _, _)) => (&o.0, o.1) < (t, *k),
            };
            if better {
                self.worst = Some(o);
            }
        }
        self
    }
}

/// Checks that adding a particle never decreases (or never increases) `V`.
pub fn verify_v_monotone(spec: &GeneratorSpec, w: &SiteWeights, direction: Direction, mode: VCheckMode) -> Result<VCertificate> {
    let width = spec.width();
    if w.len() != width {
        return Err(Error::InvalidParameter("weights and box disagree".into()));
    }
    let mode = match mode {
        VCheckMode::Auto if width <= AUTO_EXHAUSTIVE_SITES => VCheckMode::Exhaustive,
        VCheckMode::Auto => VCheckMode::LocalWindow,
        m => m,
    };
    let scan = match mode {
        VCheckMode::Exhaustive => {
            if width > EXHAUSTIVE_V_SITE_CAP {
                return Err(Error::CapExceeded {
                    what: "sites for the exhaustive potential check",
                    size: width as u128,
                    cap: EXHAUSTIVE_V_SITE_CAP as u128,
                });
            }
            exhaustive_scan(spec, w, direction)
        }
        _ => window_scan(spec, w, direction)?,
    };
    let counterexample = scan.worst.map(|(state, site, v_state, v_flipped)| VCounterexample { state, site, v_state, v_flipped });
    Ok(VCertificate { pass: counterexample.is_none(), mode, direction, comparisons: scan.comparisons, min_slack: scan.min_slack, counterexample })
}

fn exhaustive_scan(spec: &GeneratorSpec, w: &SiteWeights, direction: Direction) -> VScan {
    let width = spec.width();
    let total = 1u64 << width;
    let v: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|code| {
            let c = Config::from_code(code, width);
            if v_defined(spec, w, &c) {
                potential_v_unchecked(spec, w, &c)
            } else {
                f64::NAN
            }
        })
        .collect();
    (0..total)
        .into_par_iter()
        .fold(VScan::new, |mut acc, code| {
            let v0 = v[code as usize];
            if v0.is_nan() {
                return acc;
            }
            for k in 0..width {
                if code >> k & 1 == 0 {
                    let v1 = v[(code | 1 << k) as usize];
                    if !v1.is_nan() {
                        acc.record(direction, &Config::from_code(code, width), k, v0, v1);
                    }
                }
            }
            acc
        })
        .reduce(VScan::new, VScan::merge)
}

/// Sites whose occupation can change `V(σ^k η) − V(η)`.
pub fn influence_window(spec: &GeneratorSpec, w: &SiteWeights, k: Site) -> Vec<Site> {
    let lat = spec.lattice();
    let mut core = vec![k];
    if let Some(p) = spec.pattern() {
        core.extend_from_slice(p.sites());
    }
    if let Some(p) = w.pattern() {
        core.extend_from_slice(p.sites());
    }
    if w.form() == PsiForm::OriginHole {
        core.extend(lat.origin());
    }
    let mut out = core.clone();
    for &s in &core {
        out.extend_from_slice(lat.neighbors(s).unwrap());
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Largest window enumerated by the local check.
pub const WINDOW_SITE_CAP: usize = 24;

fn window_scan(spec: &GeneratorSpec, w: &SiteWeights, direction: Direction) -> Result<VScan> {
    let width = spec.width();
    let windows: Vec<(Site, Vec<Site>)> = (0..width).map(|k| (k, influence_window(spec, w, k))).collect();
    if let Some((_, win)) = windows.iter().find(|(_, win)| win.len() > WINDOW_SITE_CAP) {
        return Err(Error::CapExceeded { what: "window sites", size: win.len() as u128, cap: WINDOW_SITE_CAP as u128 });
    }
    Ok(windows
        .par_iter()
        .map(|(k, win)| {
            let mut acc = VScan::new();
            let kpos = win.iter().position(|s| s == k).unwrap();
            for local in 0u64..(1u64 << win.len()) {
                if local >> kpos & 1 == 1 {
                    continue;
                }
                let mut c = Config::empty(width);
                for (r, &s) in win.iter().enumerate() {
                    if local >> r & 1 == 1 {
                        c.set(s, true);
                    }
                }
                let f = c.flip(*k);
                if v_defined(spec, w, &c) && v_defined(spec, w, &f) {
                    let v0 = potential_v_unchecked(spec, w, &c);
                    let v1 = potential_v_unchecked(spec, w, &f);
                    acc.record(direction, &c, *k, v0, v1);
                }
            }
            acc
        })
        .reduce(VScan::new, VScan::merge))
}

#[derive(Debug, Clone, Serialize)]
pub struct UpsetViolation {
    pub lower: String,
    pub upper: String,
    pub upset: Vec<String>,
    /// `outside`: both states outside `Γ`; `inside`: both inside.
    pub case: &'static str,
    pub lower_rate: f64,
    pub upper_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotoneCertificate {
    pub pass: bool,
    pub ordered_pairs: usize,
    pub violation: Option<UpsetViolation>,
}

/// Dense rate table over at most 64 states.
struct SmallChain {
    states: Vec<Config>,
    rates: Vec<Vec<f64>>,
    up: Vec<u64>,
    down: Vec<u64>,
}

impl SmallChain {
    fn new(states: &[Config], rates: &dyn Fn(&Config) -> Vec<(Config, f64)>) -> Result<Self> {
        if states.len() > 64 {
            return Err(Error::CapExceeded { what: "states", size: states.len() as u128, cap: 64 });
        }
        let width = states.first().map_or(0, |c| c.width());
        if width > MONOTONE_SITE_CAP {
            return Err(Error::CapExceeded { what: "sites", size: width as u128, cap: MONOTONE_SITE_CAP as u128 });
        }
        let n = states.len();
        let mut table = vec![vec![0.0; n]; n];
        for (i, x) in states.iter().enumerate() {
            for (y, r) in rates(x) {
                if let Some(j) = states.iter().position(|s| *s == y) {
                    if j != i {
                        table[i][j] += r;
                    }
                }
            }
        }
        let mut up = vec![0u64; n];
        let mut down = vec![0u64; n];
        for i in 0..n {
            for j in 0..n {
                if states[i].leq(&states[j])? {
                    up[i] |= 1 << j;
                    down[j] |= 1 << i;
                }
            }
        }
        Ok(Self { states: states.to_vec(), rates: table, up, down })
    }

    fn rate_into(&self, x: usize, set: u64) -> f64 {
        (0..self.states.len()).filter(|&z| set >> z & 1 == 1).map(|z| self.rates[x][z]).sum()
    }

    fn all_mask(&self) -> u64 {
        if self.states.len() == 64 {
            u64::MAX
        } else {
            (1u64 << self.states.len()) - 1
        }
    }

    fn violation(&self, x: usize, y: usize, upset: u64, case: &'static str) -> UpsetViolation {
        let (lr, ur) = if case == "outside" {
            (self.rate_into(x, upset), self.rate_into(y, upset))
        } else {
            let comp = self.all_mask() & !upset;
            (self.rate_into(x, comp), self.rate_into(y, comp))
        };
        UpsetViolation {
            lower: self.states[x].to_string(),
            upper: self.states[y].to_string(),
            upset: (0..self.states.len()).filter(|&z| upset >> z & 1 == 1).map(|z| self.states[z].to_string()).collect(),
            case,
            lower_rate: lr,
            upper_rate: ur,
        }
    }
}

const MONOTONE_TOL: f64 = 1e-12;
const SUBSET_CAP: usize = 24;

fn best_closure(weights: &[f64], candidates: &[usize], closure: &[u64]) -> Result<(f64, u64)> {
    if candidates.len() > SUBSET_CAP {
        return Err(Error::CapExceeded { what: "positive-weight targets", size: candidates.len() as u128, cap: SUBSET_CAP as u128 });
    }
    let mut best = (0.0, 0u64);
    for s in 1u64..(1u64 << candidates.len()) {
        let mut set = 0u64;
        for (r, &z) in candidates.iter().enumerate() {
            if s >> r & 1 == 1 {
                set |= closure[z];
            }
        }
        let v: f64 = (0..weights.len()).filter(|&z| set >> z & 1 == 1).map(|z| weights[z]).sum();
        if v > best.0 {
            best = (v, set);
        }
    }
    Ok(best)
}

/// Up-set rate criterion for monotonicity of a generator on at most six sites.
///
/// For each ordered pair `x ≺ y` the worst up-set is found exactly: it is the
/// up-closure (down-closure for the second case) of a set of states with
/// positive rate difference.
pub fn verify_generator_monotone(states: &[Config], rates: &dyn Fn(&Config) -> Vec<(Config, f64)>) -> Result<MonotoneCertificate> {
    let ch = SmallChain::new(states, rates)?;
    let n = states.len();
    let mut pairs = 0;
    for x in 0..n {
        for y in 0..n {
            if x == y || ch.up[x] >> y & 1 == 0 {
                continue;
            }
            pairs += 1;
            // both outside Γ: Γ avoids ↓y
            let w: Vec<f64> = (0..n).map(|z| ch.rates[x][z] - ch.rates[y][z]).collect();
            let cand: Vec<usize> = (0..n).filter(|&z| ch.down[y] >> z & 1 == 0 && w[z] > MONOTONE_TOL).collect();
            let (v, set) = best_closure(&w, &cand, &ch.up)?;
            if v > MONOTONE_TOL {
                return Ok(MonotoneCertificate { pass: false, ordered_pairs: pairs, violation: Some(ch.violation(x, y, set, "outside")) });
            }
            // both inside Γ: Γ^c is a down-set avoiding ↑x
            let w: Vec<f64> = (0..n).map(|z| ch.rates[y][z] - ch.rates[x][z]).collect();
            let cand: Vec<usize> = (0..n).filter(|&z| ch.up[x] >> z & 1 == 0 && w[z] > MONOTONE_TOL).collect();
            let (v, set) = best_closure(&w, &cand, &ch.down)?;
            if v > MONOTONE_TOL {
                let upset = ch.all_mask() & !set;
                return Ok(MonotoneCertificate { pass: false, ordered_pairs: pairs, violation: Some(ch.violation(x, y, upset, "inside")) });
            }
        }
    }
    Ok(MonotoneCertificate { pass: true, ordered_pairs: pairs, violation: None })
}

/// Same criterion, quantifying over every up-set explicitly (at most five sites).
pub fn verify_generator_monotone_enumerated(states: &[Config], rates: &dyn Fn(&Config) -> Vec<(Config, f64)>) -> Result<MonotoneCertificate> {
    let width = states.first().map_or(0, |c| c.width());
    if width > ENUMERATION_SITE_CAP {
        return Err(Error::CapExceeded { what: "sites", size: width as u128, cap: ENUMERATION_SITE_CAP as u128 });
    }
    let ch = SmallChain::new(states, rates)?;
    let n = states.len();
    let codes: Vec<u64> = states.iter().map(|c| c.code().unwrap()).collect();
    let all = ch.all_mask();
    let mut pairs = 0;
    for cube_upset in enumerate_monotone_functions(width)? {
        let gamma: u64 = (0..n).filter(|&i| cube_upset >> codes[i] & 1 == 1).fold(0, |m, i| m | 1 << i);
        let comp = all & !gamma;
        pairs = 0;
        for x in 0..n {
            for y in 0..n {
                if x == y || ch.up[x] >> y & 1 == 0 {
                    continue;
                }
                pairs += 1;
                let (xi, yi) = (gamma >> x & 1 == 1, gamma >> y & 1 == 1);
                if !xi && !yi && ch.rate_into(x, gamma) > ch.rate_into(y, gamma) + MONOTONE_TOL {
                    return Ok(MonotoneCertificate { pass: false, ordered_pairs: pairs, violation: Some(ch.violation(x, y, gamma, "outside")) });
                }
                if xi && yi && ch.rate_into(x, comp) + MONOTONE_TOL < ch.rate_into(y, comp) {
                    return Ok(MonotoneCertificate { pass: false, ordered_pairs: pairs, violation: Some(ch.violation(x, y, gamma, "inside")) });
                }
            }
        }
    }
    Ok(MonotoneCertificate { pass: true, ordered_pairs: pairs, violation: None })
}

/// States off the pattern (all states for the birth-death model) as configurations.
pub fn states_off_pattern(spec: &GeneratorSpec) -> Result<Vec<Config>> {
    let space = StateSpace::new(spec)?;
    Ok((0..space.len()).map(|i| space.config(i)).collect())
}

/// Monotonicity certificate for the ψ-transformed generator.
pub fn verify_psi_generator_monotone(spec: &GeneratorSpec, w: &SiteWeights) -> Result<MonotoneCertificate> {
    let states = states_off_pattern(spec)?;
    let rates = |c: &Config| -> Vec<(Config, f64)> {
        psi_transitions(spec, w, c).map(|l| l.transitions.into_iter().map(|t| (t.target, t.rate)).collect()).unwrap_or_default()
    };
    verify_generator_monotone(&states, &rates)
}

#[derive(Debug, Clone, Serialize)]
pub struct Domination {
    pub holds: bool,
    /// Value of the maximal coupling flow (1 when a coupling exists).
    pub flow: f64,
    /// Coupling mass on ordered pairs `(lower, upper, mass)`, when it exists.
    pub coupling: Vec<(String, String, f64)>,
    /// Up-set with `p(Γ) > q(Γ)`, when domination fails.
    pub violating_upset: Option<Vec<String>>,
    pub upset_excess: f64,
}

/// Tolerance on the coupling flow deficit.
pub const DOMINATION_TOL: f64 = 1e-9;

/// Strassen test `p ≼ q` via max-flow over ordered pairs.
pub fn dominates(space: &StateSpace, p: &DistVec, q: &DistVec) -> Result<Domination> {
    let width = space.width();
    if width > DOMINATION_SITE_CAP {
        return Err(Error::CapExceeded { what: "sites", size: width as u128, cap: DOMINATION_SITE_CAP as u128 });
    }
    let n = space.len();
    if p.len() != n || q.len() != n {
        return Err(Error::InvalidParameter("distribution length differs from the state space".into()));
    }
    let (p, q) = (p.normalized(), q.normalized());
    let mut index = vec![u32::MAX; 1 << width];
    for (i, &c) in space.codes().iter().enumerate() {
        index[c as usize] = i as u32;
    }
    let source = 2 * n;
    let sink = 2 * n + 1;
    let mut g = FlowNetwork::new(2 * n + 2, 1e-15);
    let full = (1u64 << width) - 1;
    let mut pair_edges = Vec::new();
    for x in 0..n {
        if p.weights[x] <= 0.0 {
            continue;
        }
        g.add_edge(source, x, p.weights[x]);
        let cx = space.codes()[x];
        let comp = full & !cx;
        let mut s = comp;
        loop {
            let y = index[(cx | s) as usize];
            if y != u32::MAX && q.weights[y as usize] > 0.0 {
                let e = g.add_edge(x, n + y as usize, f64::INFINITY);
                pair_edges.push((x, y as usize, e));
            }
            if s == 0 {
                break;
            }
            s = (s - 1) & comp;
        }
    }
    for y in 0..n {
        if q.weights[y] > 0.0 {
            g.add_edge(n + y, sink, q.weights[y]);
        }
    }
    let flow = g.max_flow(source, sink);
    let holds = flow >= 1.0 - DOMINATION_TOL;
    if holds {
        let coupling = pair_edges
            .iter()
            .filter_map(|&(x, y, e)| {
                let f = g.flow(e);
                (f > 0.0).then(|| (space.config(x).to_string(), space.config(y).to_string(), f))
            })
            .collect();
        return Ok(Domination { holds, flow, coupling, violating_upset: None, upset_excess: 0.0 });
    }
    let reach = g.residual_reachable(source);
    let mut upset_mask = vec![false; n];
    for (&cx, _) in space.codes().iter().zip(&reach[..n]).filter(|(_, r)| **r) {
        for (y, &cy) in space.codes().iter().enumerate() {
            if cx & !cy == 0 {
                upset_mask[y] = true;
            }
        }
    }
    let excess: f64 = (0..n).filter(|&i| upset_mask[i]).map(|i| p.weights[i] - q.weights[i]).sum();
    let upset = (0..n).filter(|&i| upset_mask[i]).map(|i| space.config(i).to_string()).collect();
    Ok(Domination { holds, flow, coupling: Vec::new(), violating_upset: Some(upset), upset_excess: excess })
}

#[derive(Debug, Clone, Serialize)]
pub struct GapDecayRow {
    pub t: f64,
    pub survival: f64,
    pub ratio: f64,
    pub deviation: f64,
    /// `deviation(t)/deviation(t_prev)` against `e^{−gap·Δt}`.
    pub decay_factor: Option<f64>,
    pub decay_bound: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapDecayReport {
    pub lambda: f64,
    pub gap: f64,
    pub limit: f64,
    pub rows: Vec<GapDecayRow>,
    pub ratio_le_one: bool,
    pub decay_ok: bool,
    pub pass: bool,
}

/// Relative slack on the decay comparison.
pub const DECAY_SLACK: f64 = 0.10;
/// Deviations below this are treated as numerical noise.
const DEVIATION_FLOOR: f64 = 1e-10;

pub fn check_gap_decay(space: &StateSpace, grid: &[f64]) -> Result<GapDecayReport> {
    let m = RateMatrix::killed_generator(space);
    let sp = principal_with(space, &m)?;
    check_gap_decay_with(space, &m, &sp, grid)
}

pub fn check_gap_decay_with(space: &StateSpace, m: &RateMatrix, sp: &SpectralResult, grid: &[f64]) -> Result<GapDecayReport> {
    let iu = space.integrate(&sp.u);
    let limit = iu * iu / space.inner(&sp.u, &sp.u);
    let surv = survival_grid(m, &space.nu_dist(), grid)?;
    let mut rows: Vec<GapDecayRow> = Vec::new();
    for s in surv {
        let ratio = s.survival * (sp.lambda * s.t).exp();
        let deviation = ratio - limit;
        let (decay_factor, decay_bound) = match rows.last() {
            Some(prev) if prev.deviation > DEVIATION_FLOOR && deviation > DEVIATION_FLOOR => {
                (Some(deviation / prev.deviation), Some((-sp.gap_estimate * (s.t - prev.t)).exp()))
            }
            _ => (None, None),
        };
        rows.push(GapDecayRow { t: s.t, survival: s.survival, ratio, deviation, decay_factor, decay_bound });
    }
    let ratio_le_one = rows.iter().all(|r| r.ratio <= 1.0 + 1e-9);
    let decay_ok = rows.iter().all(|r| match (r.decay_factor, r.decay_bound) {
        (Some(f), Some(b)) => f <= b * (1.0 + DECAY_SLACK),
        _ => r.deviation <= DEVIATION_FLOOR || r.deviation >= -DEVIATION_FLOOR,
    });
    let nonneg = rows.iter().all(|r| r.deviation >= -1e-9);
    Ok(GapDecayReport { lambda: sp.lambda, gap: sp.gap_estimate, limit, rows, ratio_le_one, decay_ok, pass: ratio_le_one && decay_ok && nonneg })
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropyBoundRow {
    pub t: f64,
    pub ratio: f64,
    pub within: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropyBoundReport {
    pub lambda: f64,
    pub entropy: f64,
    pub lower_bound: f64,
    pub rows: Vec<EntropyBoundRow>,
    /// Grid time with the smallest ratio, where the lower bound is tightest.
    pub tightest_t: f64,
    pub pass: bool,
}

pub const ENTROPY_BOUND_TOL: f64 = 1e-9;

/// Entropy bound with `dν̃ ∝ u u* dν`; `u*` from the adjoint power iteration.
pub fn check_entropy_bound(space: &StateSpace, grid: &[f64]) -> Result<EntropyBoundReport> {
    let m = RateMatrix::killed_generator(space);
    let sp = principal_with(space, &m)?;
    let ustar = principal_adjoint(space, &m)?;
    let prod: Vec<f64> = sp.u.iter().zip(&ustar).map(|(a, b)| a * b).collect();
    let z = space.integrate(&prod);
    let entropy: f64 = prod
        .iter()
        .zip(space.nu())
        .map(|(d, n)| {
            let dens = d / z;
            if dens > 0.0 {
                dens * n * dens.ln()
            } else {
                0.0
            }
        })
        .sum();
    let lower_bound = (-entropy).exp();
    let surv = survival_grid(&m, &space.nu_dist(), grid)?;
    let rows: Vec<EntropyBoundRow> = surv
        .iter()
        .map(|s| {
            let ratio = s.survival * (sp.lambda * s.t).exp();
            EntropyBoundRow { t: s.t, ratio, within: ratio >= lower_bound - ENTROPY_BOUND_TOL && ratio <= 1.0 + ENTROPY_BOUND_TOL }
        })
        .collect();
    let tightest_t = rows.iter().min_by(|a, b| a.ratio.total_cmp(&b.ratio)).map_or(0.0, |r| r.t);
    let pass = rows.iter().all(|r| r.within);
    Ok(EntropyBoundReport { lambda: sp.lambda, entropy, lower_bound, rows, tightest_t, pass })
}

#[derive(Debug, Clone, Serialize)]
pub struct L2RatioRow {
    pub t: f64,
    pub ratio: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct L2RatioReport {
    pub target: f64,
    pub rows: Vec<L2RatioRow>,
    /// `g` is numerically orthogonal to `u`.
    pub degenerate: bool,
    pub gaps_decrease: bool,
    pub pass: bool,
}

/// `∫g S̄_{2t} g dν / (∫S̄_t g dν)²` against `∫u² dν`.
pub fn check_l2_ratio(space: &StateSpace, g: &[f64], grid: &[f64]) -> Result<L2RatioReport> {
    let m = RateMatrix::killed_generator(space);
    let sp = principal_with(space, &m)?;
    check_l2_ratio_with(space, &m, &sp, g, grid)
}

pub fn check_l2_ratio_with(space: &StateSpace, m: &RateMatrix, sp: &SpectralResult, g: &[f64], grid: &[f64]) -> Result<L2RatioReport> {
    let target = space.inner(&sp.u, &sp.u);
    let overlap = space.inner(g, &sp.u);
    let degenerate = overlap.abs() <= 1e-8 * space.inner(g, g).sqrt() * target.sqrt();
    let mut rows = Vec::new();
    for &t in grid {
        let st = m.expm_apply(g, t, false).values;
        let s2t = m.expm_apply(g, 2.0 * t, false).values;
        let den = space.integrate(&st);
        let ratio = space.inner(g, &s2t) / (den * den);
        rows.push(L2RatioRow { t, ratio, gap: (ratio - target).abs() });
    }
    let gaps_decrease = rows.windows(2).all(|w| w[1].gap <= w[0].gap + 1e-12 * target);
    let pass = !degenerate && gaps_decrease;
    Ok(L2RatioReport { target, rows, degenerate, gaps_decrease, pass })
}

#[derive(Debug, Clone, Serialize)]
pub struct SandwichRow {
    pub t: Option<f64>,
    pub lower_holds: bool,
    pub lower_flow: f64,
    pub upper_holds: bool,
    pub upper_flow: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SandwichReport {
    pub rows: Vec<SandwichRow>,
    pub pass: bool,
}

/// `ψ dν ≼ T_t(ν) ≼ ν` on `A^c` for exclusion models; for the birth-death
/// model `⊗ν_α ≼ μ_n ≼ ⊗ν_α̃` with `μ_n` the invariant law (grid ignored).
pub fn sandwich_report(space: &StateSpace, w: &SiteWeights, grid: &[f64]) -> Result<SandwichReport> {
    let spec = space.spec();
    let mut rows = Vec::new();
    match spec.model() {
        Model::BirthDeath { .. } => {
            let sp = dual_principal_ab(space)?;
            let mu = DistVec::new(sp.u.iter().zip(space.nu()).map(|(a, b)| a * b).collect());
            let lower = space.psi_dist(&w.with_form(spec.lattice(), PsiForm::Product, None)?);
            let upper = space.psi_dist(&w.with_form(spec.lattice(), PsiForm::InverseProduct, None)?);
            let lo = dominates(space, &lower, &mu)?;
            let hi = dominates(space, &mu, &upper)?;
            rows.push(SandwichRow { t: None, lower_holds: lo.holds, lower_flow: lo.flow, upper_holds: hi.holds, upper_flow: hi.flow });
        }
        _ => {
            let m = RateMatrix::killed_generator(space);
            let lower = space.psi_dist(w);
            let upper = space.nu_dist().normalized();
            for &t in grid {
                let tt = conditioned_law_with(&m, &space.nu_dist(), t)?;
                let lo = dominates(space, &lower, &tt)?;
                let hi = dominates(space, &tt, &upper)?;
                rows.push(SandwichRow { t: Some(t), lower_holds: lo.holds, lower_flow: lo.flow, upper_holds: hi.holds, upper_flow: hi.flow });
            }
        }
    }
    let pass = rows.iter().all(|r| r.lower_holds && r.upper_holds);
    Ok(SandwichReport { rows, pass })
}

/// Both sides of `P_η(τ>t)/ψ(η) = E^ψ_η[ψ(η_t)^{-1} exp ∫V]` on every state;
/// returns the largest relative difference.
pub fn check_feynman_kac(space: &StateSpace, w: &SiteWeights, t: f64) -> Result<f64> {
    let spec = space.spec().clone();
    let m = RateMatrix::killed_generator(space);
    let ones = vec![1.0; space.len()];
    let psi: Vec<f64> = (0..space.len()).map(|i| w.psi(&space.config(i))).collect();
    if let Some(i) = psi.iter().position(|&p| !(p > 0.0)) {
        return Err(Error::ZeroWeight(space.config(i).to_string()));
    }
    let left: Vec<f64> = m.expm_apply(&ones, t, false).values.iter().zip(&psi).map(|(a, b)| a / b).collect();
    let wcl = w.clone();
    let transformed = RateMatrix::build(space, move |c| {
        let mut l = psi_transitions(&spec, &wcl, c).expect("state off the pattern");
        l.potential = Some(potential_v_unchecked(&spec, &wcl, c));
        l
    });
    let inv: Vec<f64> = psi.iter().map(|p| 1.0 / p).collect();
    let right = transformed.expm_apply(&inv, t, false).values;
    Ok(left.iter().zip(&right).map(|(a, b)| (a - b).abs() / a.abs().max(b.abs())).fold(0.0, f64::max))
}
