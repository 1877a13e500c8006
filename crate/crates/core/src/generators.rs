//! Transition rates of the finite-volume models.
//!
//! Every consumer (exact enumeration, simulation, the h-process) obtains its
//! dynamics from the functions here. Lists hold off-diagonal moves only; the
//! diagonal is minus the total rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonic::{check_rho, SiteWeights};
use crate::lattice::{Config, LatticeBox, Pattern, Site};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Model {
    Ssep,
    /// Exclusion with intensity `beta` on the bond `(0, e_1)`.
    BetaBond { beta: f64 },
    /// Exclusion on the origin-removed box with deaths at rate `a` and births
    /// at rate `b` on the neighbours of the origin.
    BirthDeath { a: f64, b: f64 },
}

#[derive(Debug, Clone)]
pub struct GeneratorSpec {
    model: Model,
    rho: f64,
    kappa: f64,
    lattice: LatticeBox,
    pattern: Option<Pattern>,
    special_bond: Option<(Site, Site)>,
    origin_neighbors: Vec<Site>,
}

impl GeneratorSpec {
    pub fn new(model: Model, rho: f64, lattice: LatticeBox, pattern: Option<Pattern>) -> Result<Self> {
        check_rho(rho)?;
        let mut special_bond = None;
        match model {
            Model::Ssep | Model::BetaBond { .. } => {
                if lattice.origin_excluded() {
                    return Err(Error::InvalidParameter("exclusion models need the origin in the box".into()));
                }
                if pattern.is_none() {
                    return Err(Error::InvalidParameter("exclusion models need a pattern".into()));
                }
                if let Model::BetaBond { beta } = model {
                    if !(beta > 0.0 && beta.is_finite()) {
                        return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
                    }
                    let o = lattice.origin().ok_or_else(|| Error::InvalidParameter("box has no origin".into()))?;
                    let p = lattice
                        .origin_prime()
                        .ok_or_else(|| Error::InvalidParameter("box has no site e_1".into()))?;
                    special_bond = Some((o.min(p), o.max(p)));
                }
            }
            Model::BirthDeath { a, b } => {
                if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
                    return Err(Error::InvalidParameter(format!("rates must be positive (a = {a}, b = {b})")));
                }
                if !lattice.origin_excluded() {
                    return Err(Error::InvalidParameter("birth-death model needs the origin removed".into()));
                }
                if pattern.is_some() {
                    return Err(Error::InvalidParameter("birth-death model takes no pattern".into()));
                }
            }
        }
        let origin_neighbors = lattice.origin_neighbors();
        Ok(Self { model, rho, kappa: ((1.0 - rho) / rho).sqrt(), lattice, pattern, special_bond, origin_neighbors })
    }

    /// SSEP on `[-n,n]^d` with the origin pattern.
    pub fn ssep_a1(d: usize, n: u32, rho: f64) -> Result<Self> {
        let lattice = LatticeBox::cube(d, n)?;
        let pattern = Pattern::origin(&lattice)?;
        Self::new(Model::Ssep, rho, lattice, Some(pattern))
    }

    pub fn birth_death(d: usize, n: u32, rho: f64, a: f64, b: f64) -> Result<Self> {
        Self::new(Model::BirthDeath { a, b }, rho, LatticeBox::cube_without_origin(d, n)?, None)
    }

    pub fn model(&self) -> Model {
        self.model
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `κ = √((1−ρ)/ρ)`
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    pub fn pattern(&self) -> Option<&Pattern> {
        self.pattern.as_ref()
    }

    pub fn special_bond(&self) -> Option<(Site, Site)> {
        self.special_bond
    }

    pub fn width(&self) -> usize {
        self.lattice.len()
    }

    /// Whether `beta ≥ 2d − 1`, the regime where the coupling argument applies.
    pub fn beta_regime_ok(&self) -> bool {
        match self.model {
            Model::BetaBond { beta } => beta >= 2.0 * self.lattice.dim() as f64 - 1.0,
            _ => true,
        }
    }

    pub fn in_pattern(&self, c: &Config) -> bool {
        self.pattern.as_ref().is_some_and(|p| p.contains(c))
    }

    /// Product Bernoulli(ρ) weight of a configuration.
    pub fn nu(&self, c: &Config) -> f64 {
        let k = c.count() as i32;
        self.rho.powi(k) * (1.0 - self.rho).powi(c.width() as i32 - k)
    }

    fn bond_rate(&self, i: Site, j: Site) -> f64 {
        match (self.model, self.special_bond) {
            (Model::BetaBond { beta }, Some(b)) if b == (i, j) => beta,
            _ => 1.0,
        }
    }

    /// Birth/death flips at the neighbours of the origin, rate per state.
    fn flip_rate_at_origin_neighbor(&self, occupied: bool) -> f64 {
        match self.model {
            Model::BirthDeath { a, b } => {
                if occupied {
                    a
                } else {
                    b
                }
            }
            _ => 0.0,
        }
    }

    /// Rates of the Markov part `L̃` of the dual at the neighbours of the origin.
    fn dual_flip_rate(&self, occupied: bool) -> f64 {
        let rho = self.rho;
        match self.model {
            Model::BirthDeath { a, b } => {
                if occupied {
                    b * (1.0 - rho) / rho
                } else {
                    a * rho / (1.0 - rho)
                }
            }
            _ => 0.0,
        }
    }

    pub fn origin_neighbors(&self) -> &[Site] {
        &self.origin_neighbors
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Move {
    Exchange(Site, Site),
    Flip(Site),
}

impl Move {
    pub fn apply(&self, c: &Config) -> Config {
        match *self {
            Move::Exchange(i, j) => c.exchange(i, j),
            Move::Flip(k) => c.flip(k),
        }
    }

    pub fn touches(&self, s: Site) -> bool {
        match *self {
            Move::Exchange(i, j) => i == s || j == s,
            Move::Flip(k) => k == s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub mv: Move,
    pub target: Config,
    pub rate: f64,
    /// The move enters the pattern (killing mass for the stopped chain).
    pub killing: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransitionList {
    pub transitions: Vec<Transition>,
    /// Multiplicative potential of a non-conservative operator.
    pub potential: Option<f64>,
}

impl TransitionList {
    pub fn total_rate(&self) -> f64 {
        self.transitions.iter().map(|t| t.rate).sum()
    }

    pub fn killing_rate(&self) -> f64 {
        self.transitions.iter().filter(|t| t.killing).map(|t| t.rate).sum()
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Transition> {
        self.transitions.iter()
    }
}

/// Exchange and boundary moves common to all models, with the given flip rule
/// at the neighbours of the origin.
fn base_moves(spec: &GeneratorSpec, c: &Config, origin_flip: impl Fn(bool) -> f64, out: &mut Vec<Transition>) {
    let lat = &spec.lattice;
    for &(i, j) in lat.bonds() {
        if c.get(i) != c.get(j) {
            out.push(Transition { mv: Move::Exchange(i, j), target: c.exchange(i, j), rate: spec.bond_rate(i, j), killing: false });
        }
    }
    for i in lat.boundary_sites() {
        let n = lat.outside_neighbors(i) as f64;
        let rate = if c.get(i) { n * spec.kappa } else { n / spec.kappa };
        out.push(Transition { mv: Move::Flip(i), target: c.flip(i), rate, killing: false });
    }
    for &k in &spec.origin_neighbors {
        let rate = origin_flip(c.get(k));
        if rate > 0.0 {
            out.push(Transition { mv: Move::Flip(k), target: c.flip(k), rate, killing: false });
        }
    }
}

/// Full generator at `c`. Moves into the pattern are flagged as killing.
pub fn transitions(spec: &GeneratorSpec, c: &Config) -> TransitionList {
    let mut out = Vec::with_capacity(spec.lattice.bonds().len() + spec.lattice.len());
    base_moves(spec, c, |occ| spec.flip_rate_at_origin_neighbor(occ), &mut out);
    if let Some(p) = &spec.pattern {
        for t in out.iter_mut() {
            t.killing = p.contains(&t.target);
        }
    }
    TransitionList { transitions: out, potential: None }
}

/// Stopped generator at `c ∉ A`.
pub fn killed_transitions(spec: &GeneratorSpec, c: &Config) -> Result<TransitionList> {
    if spec.in_pattern(c) {
        return Err(Error::InPattern(c.to_string()));
    }
    Ok(transitions(spec, c))
}

/// Potential of the birth-death dual: `(a/(1−ρ) − b/ρ)·Σ_{k∼0}(ρ − η(k))`.
pub fn dual_ab_potential(spec: &GeneratorSpec, c: &Config) -> f64 {
    match spec.model {
        Model::BirthDeath { a, b } => {
            let rho = spec.rho;
            let s: f64 = spec.origin_neighbors.iter().map(|&k| rho - c.occ(k) as f64).sum();
            (a / (1.0 - rho) - b / rho) * s
        }
        _ => 0.0,
    }
}

/// `L* = L̃ + W` for the birth-death model: Markov part plus potential.
pub fn dual_ab_transitions(spec: &GeneratorSpec, c: &Config) -> Result<TransitionList> {
    if !matches!(spec.model, Model::BirthDeath { .. }) {
        return Err(Error::InvalidParameter("dual is defined for the birth-death model".into()));
    }
    let mut out = Vec::new();
    base_moves(spec, c, |occ| spec.dual_flip_rate(occ), &mut out);
    Ok(TransitionList { transitions: out, potential: Some(dual_ab_potential(spec, c)) })
}

/// The operator a ψ-transform acts on: the dual for the birth-death model,
/// the generator otherwise.
fn psi_base(spec: &GeneratorSpec, c: &Config) -> TransitionList {
    match spec.model {
        Model::BirthDeath { .. } => dual_ab_transitions(spec, c).unwrap(),
        _ => transitions(spec, c),
    }
}

fn check_psi_state(spec: &GeneratorSpec, w: &SiteWeights, c: &Config) -> Result<()> {
    if spec.in_pattern(c) {
        return Err(Error::InPattern(c.to_string()));
    }
    if w.vanishes(c) || w.len() != c.width() {
        return Err(Error::ZeroWeight(c.to_string()));
    }
    Ok(())
}

/// Rates `c(a,b)·ψ(b)/ψ(a)`; moves with vanishing weight are dropped.
pub fn psi_transitions(spec: &GeneratorSpec, w: &SiteWeights, c: &Config) -> Result<TransitionList> {
    check_psi_state(spec, w, c)?;
    let base = psi_base(spec, c);
    let transitions = base
        .transitions
        .into_iter()
        .filter_map(|mut t| {
            let r = if t.killing { 0.0 } else { w.psi_ratio(c, &t.target) };
            t.rate *= r;
            (t.rate > 0.0).then_some(t)
        })
        .collect();
    Ok(TransitionList { transitions, potential: None })
}

/// `V = Lψ/ψ` (the dual `L*ψ/ψ` for the birth-death model) by direct enumeration.
pub fn potential_v(spec: &GeneratorSpec, w: &SiteWeights, c: &Config) -> Result<f64> {
    check_psi_state(spec, w, c)?;
    Ok(potential_v_unchecked(spec, w, c))
}

pub(crate) fn potential_v_unchecked(spec: &GeneratorSpec, w: &SiteWeights, c: &Config) -> f64 {
    let base = psi_base(spec, c);
    let mut v = base.potential.unwrap_or(0.0);
    for t in &base.transitions {
        let r = if t.killing { 0.0 } else { w.psi_ratio(c, &t.target) };
        v += t.rate * (r - 1.0);
    }
    v
}

/// Doob transform rates `c(x,y)·u(y)/u(x)` over `y ∉ A`.
pub fn hprocess_transitions(spec: &GeneratorSpec, u: impl Fn(&Config) -> f64, c: &Config) -> Result<TransitionList> {
    if spec.in_pattern(c) {
        return Err(Error::InPattern(c.to_string()));
    }
    let ux = u(c);
    if !(ux > 0.0) {
        return Err(Error::ZeroWeight(c.to_string()));
    }
    let transitions = transitions(spec, c)
        .transitions
        .into_iter()
        .filter(|t| !t.killing)
        .map(|mut t| {
            t.rate *= u(&t.target) / ux;
            t
        })
        .collect();
    Ok(TransitionList { transitions, potential: None })
}
