use rand::Rng;
use serde::Serialize;
use ssep_core::exact::{
    check_entropy_bound, check_gap_decay, check_l2_ratio, conditioned_law, dual_principal_ab, is_irreducible, principal_dirichlet, sandwich_report,
    survival_grid, verify_psi_generator_monotone, verify_v_monotone, RateMatrix, SpectralResult, StateSpace,
};
use ssep_core::generators::{transitions, GeneratorSpec, Model};
use ssep_core::harmonic::{
    constant_for_a1, constant_for_a2, constant_for_ab, return_statistics, solve_hitting, solve_hitting_origin, summability_scan, two_point_bound,
    weights, HittingProfile, PsiForm, SiteWeights,
};
use ssep_core::hprocess::{distinguishing_probe, gap_report, martingale_check, simulate_hprocess, standard_probes, HProcess, LimitKind};
use ssep_core::lattice::{Config, LatticeBox};
use ssep_core::montecarlo::{
    conditioned_sample, coupling_trials, domination_mc, draw_initial, empirical_marginals, fleming_viot, lambda_fit, normal_quantile, standard_battery,
    survival_curve, yaglom_compare, CouplingMode, RngStream, SiteEstimate,
};

use crate::artifacts::Artifacts;
use crate::config::{PatternName, RunConfig, Sampler};
use crate::CliError;

/// Residual accepted for eigenvector and hitting-profile solves.
const SOLVE_TOL: f64 = 1e-10;
/// Family-wise level for the Monte Carlo domination batteries.
const MC_LEVEL: f64 = 0.05;
const BATTERY_RANDOM_SETS: usize = 10;

pub struct Outcome {
    pub pass: bool,
    pub lines: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self { pass: true, lines: Vec::new() }
    }

    fn check(&mut self, name: impl AsRef<str>, pass: bool, detail: impl AsRef<str>) {
        self.pass &= pass;
        let detail = detail.as_ref();
        let sep = if detail.is_empty() { "" } else { " | " };
        self.lines.push(format!("{}: {}{sep}{detail}", name.as_ref(), verdict(pass)));
    }

    fn info(&mut self, text: impl Into<String>) {
        self.lines.push(text.into());
    }
}

pub fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn coords(lat: &LatticeBox, site: usize) -> String {
    let c = lat.coords(site).unwrap();
    format!("({})", c.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","))
}

fn needs_pattern(cfg: &RunConfig, spec: &GeneratorSpec, what: &str) -> Result<(), CliError> {
    if spec.pattern().is_none() {
        return Err(CliError::Config { path: "model.name".into(), message: format!("{what} needs a model with a pattern, got {}", cfg.model.name.as_str()) });
    }
    Ok(())
}

struct Weights {
    profile: HittingProfile,
    w: SiteWeights,
    c: f64,
    source: &'static str,
}

fn site_weights(cfg: &RunConfig, spec: &GeneratorSpec) -> Result<Weights, CliError> {
    let lat = spec.lattice();
    let rho = spec.rho();
    let pattern = cfg.pattern();
    let profile = match pattern {
        PatternName::A2 => solve_hitting(lat, spec.pattern().unwrap().sites())?,
        _ => solve_hitting_origin(lat)?,
    };
    let (c, source) = match (cfg.weights.c, spec.model()) {
        (Some(c), _) => (c, "configured"),
        (None, Model::BirthDeath { a, b }) => (constant_for_ab(&profile, a, b, rho)?, "birth-death scan"),
        (None, _) if pattern == PatternName::A2 => (constant_for_a2(&profile)?, "two-site pattern"),
        (None, _) => (constant_for_a1(&profile)?, "single-site pattern"),
    };
    let form = cfg.weights.form.unwrap_or(match pattern {
        PatternName::A1 => PsiForm::OriginHole,
        PatternName::A2 => PsiForm::PatternHole,
        PatternName::None => PsiForm::Product,
    });
    let pat = matches!(form, PsiForm::PatternHole).then(|| spec.pattern()).flatten();
    let w = weights(&profile, c, rho, form, pat)?;
    Ok(Weights { profile, w, c, source })
}

#[derive(Serialize)]
struct ProfileCsv {
    site: usize,
    coords: String,
    h: f64,
    gamma: f64,
    alpha: f64,
    alpha_tilde: f64,
}

pub fn harmonic(cfg: &RunConfig, out: &mut Artifacts) -> Result<Outcome, CliError> {
    let spec = cfg.spec()?;
    let lat = spec.lattice();
    let wt = site_weights(cfg, &spec)?;
    let p = &wt.profile;
    let mut o = Outcome::new();
    out.csv(
        "profile.csv",
        lat.sites().map(|i| ProfileCsv {
            site: i,
            coords: coords(lat, i),
            h: p.value(i),
            gamma: wt.w.gamma(i),
            alpha: wt.w.alpha(i),
            alpha_tilde: wt.w.alpha_tilde(i),
        }),
    )?;
    let max_h = lat.sites().filter(|&i| !p.is_target(i)).map(|i| p.value(i)).fold(0.0, f64::max);
    o.check("hitting profile residual", p.residual() <= SOLVE_TOL, format!("{:.2e}", p.residual()));
    o.info(format!("C = {} ({}), max h off the targets = {max_h:.6}", wt.c, wt.source));
    #[derive(Serialize)]
    struct Summary<'a> {
        targets: Vec<String>,
        residual: f64,
        max_h: f64,
        c: f64,
        c_source: &'a str,
        form: PsiForm,
    }
    out.json(
        "harmonic.json",
        &Summary {
            targets: p.targets().iter().map(|&i| coords(lat, i)).collect(),
            residual: p.residual(),
            max_h,
            c: wt.c,
            c_source: wt.source,
            form: wt.w.form(),
        },
    )?;
    if cfg.model.ranges.is_none() && spec.model() == Model::Ssep && cfg.pattern() == PatternName::A1 {
        let rep = summability_scan(cfg.model.d, &cfg.run.ns, spec.rho(), wt.c)?;
        let sums: Vec<String> = rep.rows.iter().map(|r| format!("n={}:{:.4}", r.n, r.partial_sum)).collect();
        if cfg.model.d >= 5 {
            o.check("sum of (1 - alpha_i/rho)^2 stabilises in n", rep.increments_decay, sums.join(" "));
        } else {
            o.info(format!("sum of (1 - alpha_i/rho)^2 (trend only below d = 5): {}", sums.join(" ")));
        }
        out.json("summability.json", &rep)?;
    }
    Ok(o)
}

pub fn verify_psi(cfg: &RunConfig, out: &mut Artifacts) -> Result<Outcome, CliError> {
    let spec = cfg.spec()?;
    let wt = site_weights(cfg, &spec)?;
    let cert = verify_v_monotone(&spec, &wt.w, cfg.run.direction, cfg.run.check_mode)?;
    let mut o = Outcome::new();
    o.check(
        format!("V {} certificate (C = {:.6})", serde_json::to_value(cfg.run.direction).map_err(anyhow::Error::from)?.as_str().unwrap_or_default(), wt.c),
        cert.pass,
        format!("{:?}, {} comparisons, min slack {:.3e}", cert.mode, cert.comparisons, cert.min_slack),
    );
    if let Some(ce) = &cert.counterexample {
        o.info(format!("counterexample: state {} site {}: V {:.6} -> {:.6}", ce.state, ce.site, ce.v_state, ce.v_flipped));
    }
    out.json("certificate.json", &cert)?;
    Ok(o)
}

pub fn monotone(cfg: &RunConfig, out: &mut Artifacts) -> Result<Outcome, CliError> {
    let spec = cfg.spec()?;
    let wt = site_weights(cfg, &spec)?;
    let cert = verify_psi_generator_monotone(&spec, &wt.w)?;
    let mut o = Outcome::new();
    o.check("up-set criterion for the psi-chain", cert.pass, format!("{} ordered pairs", cert.ordered_pairs));
    if let Some(v) = &cert.violation {
        o.info(format!("violation: {} <= {} on up-set {:?} ({}, rates {:.4} vs {:.4})", v.lower, v.upper, v.upset, v.case, v.lower_rate, v.upper_rate));
    }
    out.json("generator.json", &cert)?;
    if matches!(spec.model(), Model::BetaBond { .. }) {
        let rep = coupling_trials(&spec, &wt.w, cfg.run.horizon, cfg.run.trials, cfg.run.seed, cfg.run.coupling)?;
        let detail = format!("{} of {} trials violate, {} mismatch phases", rep.violating_trials, rep.trials, rep.mismatch_entries);
        match cfg.run.coupling {
            CouplingMode::Ordered => o.check("ordered coupling keeps the order", rep.violating_trials == 0, detail),
            CouplingMode::Naive => o.info(format!("naive coupling (not a check): {detail}")),
        }
        out.json("coupling.json", &rep)?;
    }
    Ok(o)
}

#[derive(Serialize)]
struct SpectrumSummary {
    states: usize,
    lambda: f64,
    gap_estimate: f64,
    gap_converged: bool,
    iterations: usize,
    residual: f64,
}

impl SpectrumSummary {
    fn new(space: &StateSpace, sp: &SpectralResult) -> Self {
        Self { states: space.len(), lambda: sp.lambda, gap_estimate: sp.gap_estimate, gap_converged: sp.gap_converged, iterations: sp.iterations, residual: sp.residual }
    }
}

#[derive(Serialize)]
struct EigenCsv {
    state: String,
    u: f64,
    nu: f64,
}

fn eigen_rows<'a>(space: &'a StateSpace, u: &'a [f64]) -> impl Iterator<Item = EigenCsv> + 'a {
    let z = space.nu_mass();
    (0..space.len()).map(move |i| EigenCsv { state: space.config(i).to_string(), u: u[i], nu: space.nu()[i] / z })
}

pub fn spectrum(cfg: &RunConfig, out: &mut Artifacts) -> Result<Outcome, CliError> {
    let spec = cfg.spec()?;
    let space = cfg.space(&spec)?;
    let mut o = Outcome::new();
    if matches!(spec.model(), Model::BirthDeath { .. }) {
        let sp = dual_principal_ab(&space)?;
        o.check("stationary dual eigenfunction residual", sp.residual <= SOLVE_TOL, format!("{:.2e}", sp.residual));
        let irreducible = is_irreducible(&RateMatrix::build(&space, |c| transitions(&spec, c)));
        o.check("chain is irreducible", irreducible, format!("{} states", space.len()));
        out.json("spectrum.json", &SpectrumSummary::new(&space, &sp))?;
        out.csv("eigenfunction.csv", eigen_rows(&space, &sp.u))?;
        return Ok(o);
    }
    let grid = cfg.times();
    let sp = principal_dirichlet(&space)?;
    o.check("principal eigenpair residual", sp.residual <= SOLVE_TOL, format!("lambda {:.8}, residual {:.2e}", sp.lambda, sp.residual));
    let entropy = check_entropy_bound(&space, &grid)?;
    o.check("exp(-H) <= P(tau > t) e^(lambda t) <= 1", entropy.pass, format!("lower bound {:.6}, tightest at t = {}", entropy.lower_bound, entropy.tightest_t));
    let decay = check_gap_decay(&space, &grid)?;
    o.check("deviation decays at the spectral gap rate", decay.pass, format!("gap {:.6}, limit {:.8}", decay.gap, decay.limit));
    let ones = vec![1.0; space.len()];
    let l2 = check_l2_ratio(&space, &ones, &grid)?;
    o.check("two-time ratio tends to the L2 norm of u", l2.pass, format!("target {:.8}", l2.target));
    out.json("spectrum.json", &SpectrumSummary::new(&space, &sp))?;
    out.csv("eigenfunction.csv", eigen_rows(&space, &sp.u))?;
    out.json("tail_bounds.json", &entropy)?;
    out.json("gap_decay.json", &decay)?;
    out.json("l2_ratio.json", &l2)?;
    Ok(o)
}

/// Product law of the weights conditioned off the pattern, by rejection.
fn weight_sample(spec: &GeneratorSpec, w: &SiteWeights, n: usize, seed: u64) -> Vec<Config> {
    (0..n as u64)
        .map(|k| {
            let mut rng = RngStream::new(seed, k).rng();
            loop {
                let mut c = Config::empty(spec.width());
                for i in 0..spec.width() {
                    c.set(i, rng.random_bool(w.product_density(i)));
                }
                if !spec.in_pattern(&c) {
                    break c;
                }
            }
        })
        .collect()
}

fn conditioned(cfg: &RunConfig, spec: &GeneratorSpec) -> Result<(Vec<Config>, String), CliError> {
    Ok(match cfg.run.sampler {
        Sampler::Rejection => {
            let s = conditioned_sample(spec, cfg.run.t, cfg.run.trials, cfg.run.seed)?;
            let note = format!("rejection: {} of {} accepted", s.samples.len(), s.attempted);
            (s.samples, note)
        }
        Sampler::FlemingViot => {
            let s = fleming_viot(spec, cfg.run.t, cfg.run.trials, cfg.run.seed)?;
            (s, format!("fleming-viot with {} particles (biased at finite particle number)", cfg.run.trials))
        }
    })
}

pub fn sandwich(cfg: &RunConfig, out: &mut Artifacts) -> Result<Outcome, CliError> {
    let spec = cfg.spec()?;
    let space = cfg.space(&spec)?;
    let wt = site_weights(cfg, &spec)?;
    let grid = cfg.times();
    let rep = sandwich_report(&space, &wt.w, &grid)?;
    let mut o = Outcome::new();
    let worst = rep.rows.iter().map(|r| r.lower_flow.min(r.upper_flow)).fold(1.0, f64::min);
    o.check("exact domination sandwich", rep.pass, format!("{} rows, smallest coupling flow {:.12}", rep.rows.len(), worst));
    out.json("sandwich.json", &rep)?;
    if spec.pattern().is_none() {
        o.info("Monte Carlo sandwich skipped: the birth-death invariant law is checked exactly");
        return Ok(o);
    }
    let (middle, note) = conditioned(cfg, &spec)?;
    if middle.len() < 2 {
        return Err(CliError::Config { path: "run.trials".into(), message: format!("too few conditioned samples ({note})") });
    }
    let n = middle.len();
    let lower = weight_sample(&spec, &wt.w, n, cfg.run.seed.wrapping_add(1));
    let upper: Vec<Config> = (0..n as u64)
        .map(|k| draw_initial(&spec, &mut RngStream::new(cfg.run.seed.wrapping_add(2), k).rng()))
        .collect::<Result<_, _>>()?;
    let battery = standard_battery(spec.lattice(), BATTERY_RANDOM_SETS, cfg.run.seed);
    let lo = domination_mc(&lower, &middle, &battery, MC_LEVEL)?;
    let hi = domination_mc(&middle, &upper, &battery, MC_LEVEL)?;
    o.info(format!("t = {}: {note}", cfg.run.t));
    o.check("Monte Carlo: weight law below the conditioned law", lo.violations == 0, format!("{} of {} functions flagged", lo.violations, battery.len()));
    o.check("Monte Carlo: conditioned law below nu", hi.violations == 0, format!("{} of {} functions flagged", hi.violations, battery.len()));
    #[derive(Serialize)]
    struct Mc<'a> {
        t: f64,
        sampler: Sampler,
        samples: usize,
        lower: &'a ssep_core::montecarlo::DominationMcReport,
        upper: &'a ssep_core::montecarlo::DominationMcReport,
    }
    out.json("sandwich_mc.json", &Mc { t: cfg.run.t, sampler: cfg.run.sampler, samples: n, lower: &lo, upper: &hi })?;
    Ok(o)
}

#[derive(Serialize)]
struct SurvivalCsv {
    t: f64,
    estimate: f64,
    ci_lo: f64,
    ci_hi: f64,
    trials: usize,
}

#[derive(Serialize)]
struct ExactSurvivalCsv {
    t: f64,
    survival: f64,
    error_bound: f64,
}

pub fn survival(cfg: &RunConfig, out: &mut Artifacts) -> Result<Outcome, CliError> {
    let spec = cfg.spec()?;
    needs_pattern(cfg, &spec, "survival")?;
    let grid = cfg.times();
    let curve = survival_curve(&spec, &grid, cfg.run.trials, cfg.run.seed)?;
    out.csv(
        "survival.csv",
        (0..curve.t.len()).map(|i| SurvivalCsv { t: curve.t[i], estimate: curve.estimate[i], ci_lo: curve.ci_lo[i], ci_hi: curve.ci_hi[i], trials: curve.trials }),
    )?;
    let (t0, t1) = cfg.run.fit_window;
    let fit = lambda_fit(&curve, t0, t1)?;
    let (lo, hi) = fit.ci95();
    let mut o = Outcome::new();
    o.info(format!("lambda fit on [{t0}, {t1}]: {:.6} (95% CI [{lo:.6}, {hi:.6}], {} points)", fit.lambda, fit.points));
    let exact = if StateSpace::count_states(&spec) <= cfg.caps.states as u128 {
        let space = cfg.space(&spec)?;
        let sp = principal_dirichlet(&space)?;
        let m = RateMatrix::killed_generator(&space);
        let pts = survival_grid(&m, &space.nu_dist().normalized(), &grid)?;
        let z_crit = normal_quantile(1.0 - MC_LEVEL / (2.0 * grid.len() as f64));
        let n = curve.trials as f64;
        let max_z = pts
            .iter()
            .zip(&curve.estimate)
            .filter(|(p, _)| p.survival > 1e-12 && p.survival < 1.0 - 1e-12)
            .map(|(p, e)| (e - p.survival).abs() / (p.survival * (1.0 - p.survival) / n).sqrt())
            .fold(0.0, f64::max);
        o.check("curve agrees with uniformization", max_z <= z_crit, format!("max |z| {max_z:.2} (simultaneous bound {z_crit:.2})"));
        o.check("lambda CI covers the exact value", fit.covers(sp.lambda), format!("exact {:.6}", sp.lambda));
        out.csv("survival_exact.csv", pts.iter().map(|p| ExactSurvivalCsv { t: p.t, survival: p.survival, error_bound: p.error_bound }))?;
        Some(sp.lambda)
    } else {
        o.info("exact comparison skipped: state space above caps.states");
        None
    };
    #[derive(Serialize)]
    struct Fit<'a> {
        fit: &'a ssep_core::montecarlo::LambdaFit,
        ci95: (f64, f64),
        exact_lambda: Option<f64>,
    }
    out.json("lambda.json", &Fit { fit: &fit, ci95: (lo, hi), exact_lambda: exact })?;
    Ok(o)
}

#[derive(Serialize)]
struct YaglomCsv {
    site: usize,
    coords: String,
    alpha: f64,
    rho: f64,
    mean: f64,
    ci_lo: f64,
    ci_hi: f64,
    exact: Option<f64>,
    consistent: bool,
}

pub fn yaglom(cfg: &RunConfig, out: &mut Artifacts) -> Result<Outcome, CliError> {
    let spec = cfg.spec()?;
    needs_pattern(cfg, &spec, "yaglom")?;
    let lat = spec.lattice();
    let wt = site_weights(cfg, &spec)?;
    let exact = if StateSpace::count_states(&spec) <= cfg.caps.states as u128 {
        let space = cfg.space(&spec)?;
        Some(space.site_marginals(&conditioned_law(&space, &space.nu_dist(), cfg.run.t)?))
    } else {
        None
    };
    let mut o = Outcome::new();
    let estimates: Vec<SiteEstimate> = match cfg.run.sampler {
        Sampler::Rejection => {
            let rep = yaglom_compare(&spec, &wt.w, cfg.run.t, cfg.run.trials, cfg.run.seed)?;
            o.info(format!("t = {}: rejection, {} of {} accepted", cfg.run.t, rep.accepted, rep.attempted));
            rep.rows.into_iter().map(|r| SiteEstimate { site: r.site, mean: r.mean, ci_lo: r.ci_lo, ci_hi: r.ci_hi }).collect()
        }
        Sampler::FlemingViot => {
            let (samples, note) = conditioned(cfg, &spec)?;
            o.info(format!("t = {}: {note}", cfg.run.t));
            let pat = spec.pattern().unwrap();
            empirical_marginals(&samples, spec.width()).into_iter().filter(|e| !pat.involves(e.site)).collect()
        }
    };
    let rows: Vec<YaglomCsv> = estimates
        .iter()
        .map(|e| {
            let alpha = wt.w.alpha(e.site);
            YaglomCsv {
                site: e.site,
                coords: coords(lat, e.site),
                alpha,
                rho: spec.rho(),
                mean: e.mean,
                ci_lo: e.ci_lo,
                ci_hi: e.ci_hi,
                exact: exact.as_ref().map(|x| x[e.site]),
                consistent: e.ci_hi >= alpha && e.ci_lo <= spec.rho(),
            }
        })
        .collect();
    let bad = rows.iter().filter(|r| !r.consistent).count();
    o.check("conditioned marginals meet [alpha_i, rho]", bad == 0, format!("{bad} of {} sites inconsistent", rows.len()));
    out.csv("yaglom.csv", rows)?;
    Ok(o)
}

pub fn hprocess(cfg: &RunConfig, out: &mut Artifacts) -> Result<Outcome, CliError> {
    let spec = cfg.spec()?;
    needs_pattern(cfg, &spec, "hprocess")?;
    let space = cfg.space(&spec)?;
    let sp = principal_dirichlet(&space)?;
    let hp = HProcess::build(&space, &sp)?;
    let mut o = Outcome::new();
    let mart = martingale_check(&hp, &cfg.times());
    o.check("E[Z_t] = 1", mart.pass, format!("max deviation {:.2e}", mart.rows.iter().map(|r| r.deviation).fold(0.0, f64::max)));
    let defects = [
        ("mu-hat reversibility", hp.reversibility_defect()),
        ("h-process conserves mass", hp.conservation_defect()),
        ("mu-hat stationarity", hp.stationarity_defect()),
        ("u is an eigenfunction", hp.eigenfunction_defect(cfg.run.t)),
    ];
    for (name, d) in defects {
        o.check(name, d <= SOLVE_TOL, format!("{d:.2e}"));
    }
    let probes = standard_probes(&space);
    let r = 1.0 / hp.lambda();
    let mut limits = serde_json::Map::new();
    for kind in [LimitKind::Endpoint, LimitKind::Window, LimitKind::Interior, LimitKind::InitialWindow, LimitKind::FinalWindow] {
        let rep = gap_report(&hp, kind, &probes, r, &cfg.run.lambda_multiples, cfg.run.gap_threshold)?;
        let gaps: Vec<String> = rep.rows.iter().map(|row| format!("{:.1e}", row.max_gap)).collect();
        o.check(format!("{} limit", rep.key), rep.pass, format!("gaps {}", gaps.join(" ")));
        limits.insert(rep.key.to_string(), serde_json::to_value(&rep).map_err(anyhow::Error::from)?);
    }
    let dp = distinguishing_probe(&hp);
    o.info(format!("mu vs mu-hat on {}: {:.6} vs {:.6}", dp.probe, dp.mu_mean, dp.mu_hat_mean));
    let occupation = simulate_hprocess(&hp, cfg.run.horizon, cfg.run.trials, cfg.run.seed)?;
    o.info(format!("simulated occupation vs mu-hat: TV {:.4} over {} events", occupation.total_variation, occupation.events));
    o.check("simulated h-process never enters the pattern", !occupation.entered_pattern, "");
    #[derive(Serialize)]
    struct Report<'a> {
        lambda: f64,
        r: f64,
        martingale: &'a ssep_core::hprocess::MartingaleReport,
        defects: Vec<(&'a str, f64)>,
        limits: serde_json::Map<String, serde_json::Value>,
        distinguishing: &'a ssep_core::hprocess::DistinguishingProbe,
        occupation: &'a ssep_core::hprocess::OccupationReport,
    }
    out.json(
        "hprocess.json",
        &Report { lambda: hp.lambda(), r, martingale: &mart, defects: defects.to_vec(), limits, distinguishing: &dp, occupation: &occupation },
    )?;
    out.csv("mu_hat.csv", (0..space.len()).map(|i| EigenCsv { state: space.config(i).to_string(), u: hp.mu_hat().weights[i], nu: hp.mu().weights[i] }))?;
    Ok(o)
}

pub fn walk(cfg: &RunConfig, out: &mut Artifacts) -> Result<Outcome, CliError> {
    let d = cfg.model.d;
    let rs = return_statistics(d, cfg.run.walk_t_max)?;
    let mut o = Outcome::new();
    if d >= 4 {
        o.check("E_0[R] upper < 0.25", rs.upper < 0.25, format!("[{:.6}, {:.6}]", rs.lower, rs.upper));
    } else {
        o.info(format!("E_0[R] in [{:.6}, {:.6}] for d = {d} (no bound claimed below d = 4)", rs.lower, rs.upper));
    }
    let tp = two_point_bound(d, &cfg.run.ns)?;
    let maxes: Vec<String> = tp.rows.iter().map(|r| format!("n={}:{:.5}", r.n, r.max_pair)).collect();
    if d >= 4 {
        o.check("two-point hitting values < 1/2", tp.all_below_half, maxes.join(" "));
    } else {
        o.info(format!("two-point hitting values {} (no bound claimed below d = 4)", maxes.join(" ")));
    }
    o.check("two-point values monotone in n", tp.monotone_in_n, "");
    #[derive(Serialize)]
    struct Walk<'a> {
        returns: &'a ssep_core::harmonic::ReturnStatistics,
        two_point: &'a ssep_core::harmonic::TwoPointReport,
    }
    out.json("walk.json", &Walk { returns: &rs, two_point: &tp })?;
    Ok(o)
}

#[derive(Serialize)]
struct RateCsv {
    from: String,
    to: String,
    rate: f64,
}

pub fn rates(cfg: &RunConfig, out: &mut Artifacts) -> Result<Outcome, CliError> {
    let spec = cfg.spec()?;
    let w = spec.width();
    if w > cfg.caps.dump_sites {
        return Err(CliError::Cap(format!("caps.dump_sites: {w} sites > {}", cfg.caps.dump_sites)));
    }
    let mut rows = Vec::new();
    for code in 0..1u64 << w {
        let c = Config::from_code(code, w);
        let mut ts: Vec<(String, f64)> = transitions(&spec, &c).iter().map(|t| (t.target.to_string(), t.rate)).collect();
        ts.sort_by(|a, b| a.0.cmp(&b.0));
        let from = c.to_string();
        rows.extend(ts.into_iter().map(|(to, rate)| RateCsv { from: from.clone(), to, rate }));
    }
    let mut o = Outcome::new();
    o.info(format!("{} states, {} transitions", 1u64 << w, rows.len()));
    out.csv("rates.csv", rows)?;
    Ok(o)
}
