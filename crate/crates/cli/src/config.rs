//! Run configuration: TOML file, command-line overrides, validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use ssep_core::exact::{Direction, StateSpace, VCheckMode, STATE_CAP};
use ssep_core::generators::{GeneratorSpec, Model};
use ssep_core::harmonic::PsiForm;
use ssep_core::lattice::{LatticeBox, Pattern};
use ssep_core::montecarlo::CouplingMode;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelName {
    Ssep,
    BetaBond,
    BirthDeath,
}

impl ModelName {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::Ssep => "ssep",
            ModelName::BetaBond => "beta-bond",
            ModelName::BirthDeath => "birth-death",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternName {
    /// The origin is occupied.
    A1,
    /// The origin and its neighbour along the first axis are both occupied.
    A2,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampler {
    Rejection,
    /// Biased at finite particle number.
    FlemingViot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub name: ModelName,
    pub d: usize,
    pub n: u32,
    pub rho: f64,
    pub beta: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub pattern: Option<PatternName>,
    /// Per-axis inclusive coordinate ranges; replaces `d` and `n`.
    pub ranges: Option<Vec<(i32, i32)>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { name: ModelName::Ssep, d: 1, n: 1, rho: 0.5, beta: None, a: None, b: None, pattern: None, ranges: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsConfig {
    /// Overrides the model's constant.
    pub c: Option<f64>,
    pub form: Option<PsiForm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunParams {
    pub seed: u64,
    pub trials: usize,
    /// Explicit time grid; otherwise `steps + 1` points on `[0, t_max]`.
    pub times: Option<Vec<f64>>,
    pub t_max: f64,
    pub steps: usize,
    pub t: f64,
    pub horizon: f64,
    pub fit_window: (f64, f64),
    pub direction: Direction,
    pub check_mode: VCheckMode,
    pub coupling: CouplingMode,
    pub sampler: Sampler,
    pub walk_t_max: usize,
    pub ns: Vec<u32>,
    /// Multiples of `1/λ` at which the h-process limits are tabulated.
    pub lambda_multiples: Vec<f64>,
    pub gap_threshold: f64,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            seed: 1,
            trials: 10_000,
            times: None,
            t_max: 4.0,
            steps: 16,
            t: 1.0,
            horizon: 2.0,
            fit_window: (1.5, 4.0),
            direction: Direction::Increasing,
            check_mode: VCheckMode::Auto,
            coupling: CouplingMode::Ordered,
            sampler: Sampler::Rejection,
            walk_t_max: 2000,
            ns: vec![1, 2, 3, 4],
            lambda_multiples: vec![4.0, 8.0, 12.0, 16.0, 20.0],
            gap_threshold: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("ssep-out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapsConfig {
    pub states: u64,
    /// Sites allowed in the `rates` dump.
    pub dump_sites: usize,
}

impl Default for CapsConfig {
    fn default() -> Self {
        Self { states: STATE_CAP as u64, dump_sites: 12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub weights: WeightsConfig,
    pub run: RunParams,
    pub output: OutputConfig,
    pub caps: CapsConfig,
}

/// Command-line values, written over the file at their dotted paths.
pub type Overrides = Vec<(&'static str, toml::Value)>;

fn config_err(path: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Config { path: path.into(), message: message.into() }
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), CliError> {
    let (head, last) = path.rsplit_once('.').map_or((None, path), |(h, l)| (Some(h), l));
    let mut cur = table;
    for key in head.into_iter().flat_map(|h| h.split('.')) {
        let entry = cur.entry(key.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| config_err(key, "expected a table"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn load(file: Option<&Path>, overrides: Overrides) -> Result<Self, CliError> {
        let mut table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| config_err("--config", format!("{}: {e}", p.display())))?;
                text.parse::<toml::Table>().map_err(|e| config_err("--config", e.to_string().trim_end()))?
            }
            None => toml::Table::new(),
        };
        for (path, value) in overrides {
            set_path(&mut table, path, value)?;
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            config_err(if path == "." { String::new() } else { path }, e.into_inner().message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let m = &self.model;
        if !(m.rho > 0.0 && m.rho < 1.0) {
            return Err(config_err("model.rho", format!("must lie in (0, 1), got {}", m.rho)));
        }
        if m.d == 0 {
            return Err(config_err("model.d", "must be at least 1"));
        }
        match m.name {
            ModelName::BetaBond => {
                let beta = m.beta.ok_or_else(|| config_err("model.beta", "required for the beta-bond model"))?;
                if !(beta > 0.0 && beta.is_finite()) {
                    return Err(config_err("model.beta", format!("must be positive, got {beta}")));
                }
            }
            ModelName::BirthDeath => {
                for (key, v) in [("model.a", m.a), ("model.b", m.b)] {
                    let v = v.ok_or_else(|| config_err(key, "required for the birth-death model"))?;
                    if !(v > 0.0 && v.is_finite()) {
                        return Err(config_err(key, format!("must be positive, got {v}")));
                    }
                }
                if matches!(m.pattern, Some(PatternName::A1 | PatternName::A2)) {
                    return Err(config_err("model.pattern", "the birth-death model has no pattern; use \"none\""));
                }
            }
            ModelName::Ssep => {}
        }
        if m.name != ModelName::BirthDeath && m.pattern == Some(PatternName::None) {
            return Err(config_err("model.pattern", "exclusion models need a pattern (a1 or a2)"));
        }
        if let Some(r) = &m.ranges {
            if r.is_empty() || r.iter().any(|(lo, hi)| lo > hi) {
                return Err(config_err("model.ranges", "each axis needs lo <= hi"));
            }
        }
        if let Some(c) = self.weights.c {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(config_err("weights.c", format!("must be nonnegative, got {c}")));
            }
        }
        let r = &self.run;
        if r.trials == 0 {
            return Err(config_err("run.trials", "must be positive"));
        }
        if let Some(ts) = &r.times {
            if ts.is_empty() || ts.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || ts.windows(2).any(|w| w[1] < w[0]) {
                return Err(config_err("run.times", "must be nonempty, nonnegative and nondecreasing"));
            }
        } else if !(r.t_max > 0.0 && r.t_max.is_finite()) || r.steps == 0 {
            return Err(config_err("run.t_max", "t_max must be positive and steps at least 1"));
        }
        for (key, v) in [("run.t", r.t), ("run.horizon", r.horizon)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(key, format!("must be positive, got {v}")));
            }
        }
        if !(r.fit_window.0 >= 0.0 && r.fit_window.1 > r.fit_window.0) {
            return Err(config_err("run.fit_window", "needs 0 <= start < end"));
        }
        if r.ns.is_empty() || r.ns.contains(&0) {
            return Err(config_err("run.ns", "box sizes must be positive"));
        }
        if r.lambda_multiples.is_empty() || r.lambda_multiples.iter().any(|x| !(*x > 0.0)) {
            return Err(config_err("run.lambda_multiples", "must be positive"));
        }
        if !(r.gap_threshold > 0.0) {
            return Err(config_err("run.gap_threshold", "must be positive"));
        }
        if self.caps.states == 0 {
            return Err(config_err("caps.states", "must be positive"));
        }
        self.spec().map(|_| ())
    }

    pub fn pattern(&self) -> PatternName {
        self.model.pattern.unwrap_or(match self.model.name {
            ModelName::Ssep => PatternName::A1,
            ModelName::BetaBond => PatternName::A2,
            ModelName::BirthDeath => PatternName::None,
        })
    }

    pub fn spec(&self) -> Result<GeneratorSpec, CliError> {
        let m = &self.model;
        let origin_excluded = m.name == ModelName::BirthDeath;
        let lattice = match &m.ranges {
            Some(r) => LatticeBox::with_ranges(r.clone(), origin_excluded),
            None if origin_excluded => LatticeBox::cube_without_origin(m.d, m.n),
            None => LatticeBox::cube(m.d, m.n),
        }
        .map_err(|e| config_err(if m.ranges.is_some() { "model.ranges" } else { "model.n" }, e.to_string()))?;
        let pattern = match self.pattern() {
            PatternName::A1 => Some(Pattern::origin(&lattice)),
            PatternName::A2 => Some(Pattern::origin_pair(&lattice)),
            PatternName::None => None,
        }
        .transpose()
        .map_err(|e| config_err("model.pattern", e.to_string()))?;
        let model = match m.name {
            ModelName::Ssep => Model::Ssep,
            ModelName::BetaBond => Model::BetaBond { beta: m.beta.unwrap_or_default() },
            ModelName::BirthDeath => Model::BirthDeath { a: m.a.unwrap_or_default(), b: m.b.unwrap_or_default() },
        };
        GeneratorSpec::new(model, m.rho, lattice, pattern).map_err(|e| config_err("model", e.to_string()))
    }

    pub fn times(&self) -> Vec<f64> {
        match &self.run.times {
            Some(ts) => ts.clone(),
            None => (0..=self.run.steps).map(|k| self.run.t_max * k as f64 / self.run.steps as f64).collect(),
        }
    }

    /// State space under `caps.states`, checked before any enumeration.
    pub fn space(&self, spec: &GeneratorSpec) -> Result<StateSpace, CliError> {
        let count = StateSpace::count_states(spec);
        if count > self.caps.states as u128 {
            return Err(CliError::Cap(format!("caps.states: the system has {count} states, cap is {}", self.caps.states)));
        }
        Ok(StateSpace::with_cap(spec, self.caps.states as u128)?)
    }
}
