mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Overrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("cap exceeded: {0}")]
    Cap(String),
    #[error(transparent)]
    Core(ssep_core::Error),
    #[error(transparent)]
    Io(#[from] anyhow::Error),
}

impl From<ssep_core::Error> for CliError {
    fn from(e: ssep_core::Error) -> Self {
        use ssep_core::Error as E;
        match e {
            E::CapExceeded { .. } => CliError::Cap(e.to_string()),
            E::ConstantUnavailable { .. } | E::ScanExhausted { .. } => CliError::Config { path: "weights.c".into(), message: e.to_string() },
            E::WindowTooSmall { .. } => CliError::Config { path: "run.fit_window".into(), message: e.to_string() },
            E::AcceptanceTooLow { .. } => CliError::Config { path: "run.t".into(), message: e.to_string() },
            E::InvalidParameter(_) | E::InPattern(_) | E::ZeroWeight(_) | E::Lattice(_) | E::EmptyTargets => {
                CliError::Config { path: "model".into(), message: e.to_string() }
            }
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Cap(_) => 3,
            CliError::Core(_) | CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ssep", version, about = "Exact checks and Monte Carlo estimators for pattern hitting in exclusion processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Hitting profiles, weights and the constant C.
    Harmonic,
    /// Monotonicity certificate for the potential V.
    VerifyPsi,
    /// Up-set criterion for the ψ-chain, plus coupling trials for the β-bond model.
    Monotone,
    /// Principal Dirichlet eigenpair and the tail checks built on it.
    Spectrum,
    /// Exact and Monte Carlo domination sandwich.
    Sandwich,
    /// Survival curve and decay-rate fit.
    Survival,
    /// Conditioned site marginals against the weight bounds.
    Yaglom,
    /// h-process construction and its limit theorems.
    Hprocess,
    /// Return-count and two-point bounds for the simple random walk.
    Walk,
    /// Dump the full rate matrix of a small system.
    Rates,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Harmonic => "harmonic",
            Command::VerifyPsi => "verify-psi",
            Command::Monotone => "monotone",
            Command::Spectrum => "spectrum",
            Command::Sandwich => "sandwich",
            Command::Survival => "survival",
            Command::Yaglom => "yaglom",
            Command::Hprocess => "hprocess",
            Command::Walk => "walk",
            Command::Rates => "rates",
        }
    }
}

#[derive(Debug, Args)]
struct Flags {
    /// ssep, beta-bond or birth-death.
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    d: Option<usize>,
    #[arg(long, global = true)]
    n: Option<u32>,
    #[arg(long, global = true)]
    rho: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    a: Option<f64>,
    #[arg(long, global = true)]
    b: Option<f64>,
    /// a1, a2 or none.
    #[arg(long, global = true)]
    pattern: Option<String>,
    /// Weight constant C.
    #[arg(long, global = true)]
    c: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true)]
    t: Option<f64>,
    #[arg(long, global = true)]
    t_max: Option<f64>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// rejection or fleming-viot.
    #[arg(long, global = true)]
    sampler: Option<String>,
    /// ordered or naive.
    #[arg(long, global = true)]
    coupling: Option<String>,
    /// Output directory; artifacts go to `<out>/<subcommand>/`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    max_states: Option<u64>,
}

impl Flags {
    fn overrides(&self) -> Overrides {
        use toml::Value as V;
        let mut o: Overrides = Vec::new();
        let mut put = |k, v: Option<V>| {
            if let Some(v) = v {
                o.push((k, v));
            }
        };
        let int = |x: u64| V::Integer(x as i64);
        put("model.name", self.model.clone().map(V::String));
        put("model.d", self.d.map(|x| int(x as u64)));
        put("model.n", self.n.map(|x| int(x as u64)));
        put("model.rho", self.rho.map(V::Float));
        put("model.beta", self.beta.map(V::Float));
        put("model.a", self.a.map(V::Float));
        put("model.b", self.b.map(V::Float));
        put("model.pattern", self.pattern.clone().map(V::String));
        put("weights.c", self.c.map(V::Float));
        put("run.seed", self.seed.map(int));
        put("run.trials", self.trials.map(|x| int(x as u64)));
        put("run.t", self.t.map(V::Float));
        put("run.t_max", self.t_max.map(V::Float));
        put("run.steps", self.steps.map(|x| int(x as u64)));
        put("run.horizon", self.horizon.map(V::Float));
        put("run.sampler", self.sampler.clone().map(V::String));
        put("run.coupling", self.coupling.clone().map(V::String));
        put("output.dir", self.out.as_ref().map(|p| V::String(p.display().to_string())));
        put("caps.states", self.max_states.map(int));
        o
    }
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let cfg = RunConfig::load(cli.config.as_deref(), cli.flags.overrides())?;
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(CliError::Config { path: "--workers".into(), message: "must be at least 1".into() });
        }
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global().map_err(|e| anyhow::anyhow!(e))?;
    }
    let name = cli.command.name();
    let mut out = artifacts::Artifacts::create(&cfg.output.dir.join(name))?;
    let outcome = match cli.command {
        Command::Harmonic => commands::harmonic(&cfg, &mut out),
        Command::VerifyPsi => commands::verify_psi(&cfg, &mut out),
        Command::Monotone => commands::monotone(&cfg, &mut out),
        Command::Spectrum => commands::spectrum(&cfg, &mut out),
        Command::Sandwich => commands::sandwich(&cfg, &mut out),
        Command::Survival => commands::survival(&cfg, &mut out),
        Command::Yaglom => commands::yaglom(&cfg, &mut out),
        Command::Hprocess => commands::hprocess(&cfg, &mut out),
        Command::Walk => commands::walk(&cfg, &mut out),
        Command::Rates => commands::rates(&cfg, &mut out),
    }?;
    for line in &outcome.lines {
        println!("{line}");
    }
    let manifest = out.finish(name, &cfg, outcome.pass)?;
    println!("overall: {}", commands::verdict(outcome.pass));
    println!("manifest: {}", manifest.display());
    Ok(outcome.pass)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
