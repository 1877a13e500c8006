//! Acceptance suite. Each check prints one `PASS`/`FAIL` line; run with
//! `cargo test -p ssep-core --test acceptance -- --nocapture --test-threads 1`.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use ssep_core::exact::{
    check_entropy_bound, check_gap_decay, dual_principal_ab, principal_dirichlet, sandwich_report, survival_grid, verify_psi_generator_monotone,
    verify_v_monotone, Direction, DistVec, RateMatrix, StateSpace, VCheckMode,
};
use ssep_core::generators::{dual_ab_transitions, transitions, GeneratorSpec, Model};
use ssep_core::harmonic::{
    constant_for_a1, constant_for_a2, constant_for_ab, return_statistics, solve_hitting, solve_hitting_origin, two_point_bound, weights, PsiForm,
};
use ssep_core::hprocess::{distinguishing_probe, gap_report, martingale_check, standard_probes, HProcess, LimitKind};
use ssep_core::lattice::{Config, LatticeBox, Pattern};
use ssep_core::montecarlo::{
    conditioned_sample, coupling_trials, empirical_marginals, lambda_fit, normal_quantile, survival_curve, time_t_states, CouplingMode,
};

fn line(criterion: u32, name: &str, pass: bool, detail: impl AsRef<str>) -> bool {
    println!("criterion {criterion} | {} | {name} | {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
    pass
}

fn timed(criterion: u32, name: &str, limit: Duration, start: Instant) -> bool {
    let el = start.elapsed();
    line(criterion, name, el < limit, format!("{:.1}s (limit {}s)", el.as_secs_f64(), limit.as_secs()))
}

fn segment_a2_box() -> (LatticeBox, Pattern) {
    let lat = LatticeBox::with_ranges(vec![(0, 1), (-1, 1)], false).unwrap();
    let pat = Pattern::origin_pair(&lat).unwrap();
    (lat, pat)
}

fn beta_spec(beta: f64) -> GeneratorSpec {
    let (lat, pat) = segment_a2_box();
    GeneratorSpec::new(Model::BetaBond { beta }, 0.5, lat, Some(pat)).unwrap()
}

fn a2_weights(spec: &GeneratorSpec) -> ssep_core::harmonic::SiteWeights {
    let pat = spec.pattern().unwrap();
    let prof = solve_hitting(spec.lattice(), pat.sites()).unwrap();
    let c = constant_for_a2(&prof).unwrap();
    weights(&prof, c, spec.rho(), PsiForm::PatternHole, Some(pat)).unwrap()
}

#[test]
fn criterion_1_psi_certificates() {
    let mut ok = true;
    for (d, n) in [(2usize, 1u32), (2, 2), (3, 1)] {
        let start = Instant::now();
        let spec = GeneratorSpec::ssep_a1(d, n, 0.5).unwrap();
        let prof = solve_hitting_origin(spec.lattice()).unwrap();
        let c = constant_for_a1(&prof).unwrap();
        let w = weights(&prof, c, 0.5, PsiForm::OriginHole, None).unwrap();
        let cert = verify_v_monotone(&spec, &w, Direction::Increasing, VCheckMode::Auto).unwrap();
        ok &= line(1, &format!("d={d} n={n} C={c:.6} V increasing"), cert.pass, format!("{:?}, {} comparisons, min slack {:.3e}", cert.mode, cert.comparisons, cert.min_slack));
        let flat = weights(&prof, 0.0, 0.5, PsiForm::OriginHole, None).unwrap();
        let cert = verify_v_monotone(&spec, &flat, Direction::Increasing, VCheckMode::Auto).unwrap();
        let ce = cert.counterexample.as_ref();
        ok &= line(
            1,
            &format!("d={d} n={n} unit weights rejected"),
            !cert.pass && ce.is_some(),
            ce.map_or("no counterexample".into(), |c| format!("state {} site {} V {:.4} -> {:.4}", c.state, c.site, c.v_state, c.v_flipped)),
        );
        ok &= timed(1, &format!("d={d} n={n} runtime"), Duration::from_secs(60), start);
    }
    assert!(ok);
}

#[test]
fn criterion_2_beta_bond() {
    let start = Instant::now();
    let mut ok = true;
    let d = 2;
    for (beta, expect) in [(1.0, false), ((2 * d - 1) as f64, true), (4.0, true)] {
        let spec = beta_spec(beta);
        let w = a2_weights(&spec);
        let cert = verify_psi_generator_monotone(&spec, &w).unwrap();
        let detail = match &cert.violation {
            Some(v) => format!("{} pairs, violation {} <= {} on {} ({}, rates {:.4} vs {:.4})", cert.ordered_pairs, v.lower, v.upper, v.upset.len(), v.case, v.lower_rate, v.upper_rate),
            None => format!("{} ordered pairs", cert.ordered_pairs),
        };
        ok &= line(2, &format!("6-site d=2 A2 beta={beta} monotone={expect}"), cert.pass == expect, detail);
    }
    let spec = beta_spec(3.0);
    let w = a2_weights(&spec);
    let r = coupling_trials(&spec, &w, 5.0, 10_000, 2024, CouplingMode::Ordered).unwrap();
    ok &= line(
        2,
        "ordered coupling beta=3, 10^4 trials",
        r.total_violations == 0 && r.mismatch_entries > 0,
        format!("{} violations, {} mismatch phases", r.total_violations, r.mismatch_entries),
    );
    let spec = beta_spec(1.0);
    let w = a2_weights(&spec);
    let r = coupling_trials(&spec, &w, 5.0, 10_000, 2024, CouplingMode::Naive).unwrap();
    ok &= line(2, "naive shared clocks beta=1 breaks order", r.violating_trials > 0, format!("{} of {} trials violate", r.violating_trials, r.trials));

    // The one-dimensional segment has 2d-1 = 1, so beta = 1 already lies in the monotone regime.
    let lat = LatticeBox::with_ranges(vec![(-2, 3)], false).unwrap();
    let pat = Pattern::origin_pair(&lat).unwrap();
    let spec = GeneratorSpec::new(Model::BetaBond { beta: 1.0 }, 0.5, lat, Some(pat)).unwrap();
    let prof = solve_hitting(spec.lattice(), spec.pattern().unwrap().sites()).unwrap();
    match constant_for_a2(&prof) {
        Ok(c) => {
            let w = weights(&prof, c, 0.5, PsiForm::PatternHole, spec.pattern()).unwrap();
            let cert = verify_psi_generator_monotone(&spec, &w).unwrap();
            println!("criterion 2 | INFO | 6-site d=1 segment beta=1 (= 2d-1) | monotone={}", cert.pass);
        }
        Err(e) => println!("criterion 2 | INFO | 6-site d=1 segment | no two-site constant: {e}"),
    }
    ok &= timed(2, "runtime", Duration::from_secs(300), start);
    assert!(ok);
}

/// Invariant law by a dense linear solve of `πQ = 0`, `Σπ = 1`.
fn dense_stationary(space: &StateSpace) -> Vec<f64> {
    let n = space.len();
    let mut q = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for t in transitions(space.spec(), &space.config(i)).iter() {
            let j = space.index_of(&t.target).unwrap();
            q[(i, j)] += t.rate;
            q[(i, i)] -= t.rate;
        }
    }
    let mut a = q.transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[n - 1] = 1.0;
    a.lu().solve(&rhs).unwrap().iter().copied().collect()
}

#[test]
fn criterion_3_birth_death_sandwich() {
    let start = Instant::now();
    let mut ok = true;
    for (a, b, rho) in [(2.0, 1.0, 0.5), (1.0, 3.0, 0.3), (1.0, 1.0, 0.5)] {
        let spec = GeneratorSpec::birth_death(2, 1, rho, a, b).unwrap();
        let space = StateSpace::new(&spec).unwrap();
        let sp = dual_principal_ab(&space).unwrap();
        let pi = dense_stationary(&space);
        let u_dense: Vec<f64> = pi.iter().zip(space.nu()).map(|(p, n)| p / n).collect();
        let umax = sp.u.iter().fold(0.0f64, |m, &x| m.max(x));
        let diff = sp.u.iter().zip(&u_dense).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / umax;
        let dual = RateMatrix::build(&space, |c| dual_ab_transitions(&spec, c).unwrap());
        let lu = dual.apply(&sp.u);
        let dual_res = lu.iter().fold(0.0f64, |m, &x| m.max(x.abs())) / umax;
        ok &= line(3, &format!("a={a} b={b} rho={rho} dual residual"), sp.residual <= 1e-10 && dual_res <= 1e-10, format!("power {:.2e}, dual operator {:.2e}", sp.residual, dual_res));
        ok &= line(3, &format!("a={a} b={b} rho={rho} vs dense null space"), diff <= 1e-10, format!("max rel diff {diff:.2e}"));
        if (a * rho - b * (1.0 - rho)).abs() < 1e-15 {
            let dev = sp.u.iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max);
            ok &= line(3, &format!("a={a} b={b} rho={rho} balanced: mu_n = nu_rho"), dev <= 1e-10, format!("max |u-1| {dev:.2e}"));
        } else {
            let prof = solve_hitting_origin(spec.lattice()).unwrap();
            let c = constant_for_ab(&prof, a, b, rho).unwrap();
            let w = weights(&prof, c, rho, PsiForm::Product, None).unwrap();
            let rep = sandwich_report(&space, &w, &[]).unwrap();
            let row = &rep.rows[0];
            ok &= line(
                3,
                &format!("a={a} b={b} rho={rho} C={c} product(alpha) <= mu_n <= product(alpha~)"),
                rep.pass,
                format!("flows {:.12} / {:.12}", row.lower_flow, row.upper_flow),
            );
        }
    }
    ok &= timed(3, "runtime", Duration::from_secs(120), start);
    assert!(ok);
}

#[test]
fn criterion_4_tail_asymptotics() {
    let start = Instant::now();
    let grid: Vec<f64> = (0..=24).map(|k| k as f64 * 0.5).collect();
    let mut ok = true;
    let systems = [
        ("d=1 n=4 A1", GeneratorSpec::ssep_a1(1, 4, 0.5).unwrap()),
        ("d=2 n=1 A1 rho=0.3", GeneratorSpec::ssep_a1(2, 1, 0.3).unwrap()),
        ("6-site beta=3 A2", beta_spec(3.0)),
    ];
    for (name, spec) in systems {
        let space = StateSpace::new(&spec).unwrap();
        let entropy = check_entropy_bound(&space, &grid).unwrap();
        let worst = entropy.rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
        ok &= line(
            4,
            &format!("{name} exp(-H) <= P e^(lt) <= 1"),
            entropy.pass,
            format!("lambda {:.6}, lower {:.6}, min ratio {:.6} at t={}", entropy.lambda, entropy.lower_bound, worst, entropy.tightest_t),
        );
        let decay = check_gap_decay(&space, &grid).unwrap();
        let compared = decay.rows.iter().filter(|r| r.decay_factor.is_some()).count();
        ok &= line(
            4,
            &format!("{name} deviation decays at the gap rate"),
            decay.pass && compared >= 3,
            format!("gap {:.6}, limit {:.8}, {} intervals compared", decay.gap, decay.limit, compared),
        );
    }
    ok &= timed(4, "runtime", Duration::from_secs(60), start);
    assert!(ok);
}

#[test]
fn criterion_5_walk_bounds() {
    let start = Instant::now();
    let rs = return_statistics(4, 2000).unwrap();
    let mut ok = line(5, "d=4 E_0[R] upper < 0.25", rs.upper < 0.25, format!("[{:.6}, {:.6}]", rs.lower, rs.upper));
    let tp = two_point_bound(4, &[1, 2, 3, 4]).unwrap();
    let maxes: Vec<String> = tp.rows.iter().map(|r| format!("n={}:{:.5}", r.n, r.max_pair)).collect();
    ok &= line(5, "d=4 two-point values < 1/2", tp.all_below_half, maxes.join(" "));
    ok &= line(5, "d=4 two-point values monotone in n", tp.monotone_in_n, "");
    ok &= timed(5, "runtime", Duration::from_secs(120), start);
    assert!(ok);
}

/// `|p̂ − p| ≤ z·sqrt(p(1−p)/n)`.
fn within(p_hat: f64, p: f64, n: usize, z: f64) -> bool {
    let p = p.clamp(0.0, 1.0);
    (p_hat - p).abs() <= z * (p * (1.0 - p) / n as f64).sqrt() + 1e-12
}

fn exact_marginals(space: &StateSpace, law: &DistVec) -> Vec<f64> {
    space.site_marginals(law)
}

#[test]
fn criterion_6_monte_carlo_vs_exact() {
    let start = Instant::now();
    let trials = 100_000;
    let mut ok = true;
    let grid: Vec<f64> = (0..=16).map(|k| k as f64 * 0.25).collect();
    for (name, spec, seed) in [("SSEP d=2 n=1 A1", GeneratorSpec::ssep_a1(2, 1, 0.5).unwrap(), 11u64), ("beta=3 6-site A2", beta_spec(3.0), 12)] {
        let space = StateSpace::new(&spec).unwrap();
        let m = RateMatrix::killed_generator(&space);
        let exact = survival_grid(&m, &space.nu_dist().normalized(), &grid).unwrap();
        let curve = survival_curve(&spec, &grid, trials, seed).unwrap();
        let z = normal_quantile(1.0 - 0.025 / grid.len() as f64);
        let worst = exact
            .iter()
            .zip(&curve.estimate)
            .filter(|(e, _)| e.survival < 1.0 - 1e-12)
            .map(|(e, p)| (p - e.survival).abs() / (e.survival * (1.0 - e.survival) / trials as f64).sqrt())
            .fold(0.0, f64::max);
        let pass = exact.iter().zip(&curve.estimate).all(|(e, &p)| within(p, e.survival, trials, z));
        ok &= line(6, &format!("{name} survival curve vs uniformization"), pass, format!("max |z| {worst:.2} (simultaneous bound {z:.2})"));
        let sp = principal_dirichlet(&space).unwrap();
        let fit = lambda_fit(&curve, 1.5, 4.0).unwrap();
        let (lo, hi) = fit.ci95();
        ok &= line(6, &format!("{name} lambda fit covers exact"), fit.covers(sp.lambda), format!("exact {:.5}, fit {:.5} [{lo:.5}, {hi:.5}]", sp.lambda, fit.lambda));

        let t = 1.0;
        let sample = conditioned_sample(&spec, t, trials, seed + 100).unwrap();
        let law = ssep_core::exact::conditioned_law_with(&m, &space.nu_dist(), t).unwrap();
        let ex = exact_marginals(&space, &law);
        let emp = empirical_marginals(&sample.samples, spec.width());
        let z = normal_quantile(1.0 - 0.025 / ex.len() as f64);
        let pass = emp.iter().zip(&ex).all(|(e, &p)| within(e.mean, p, sample.samples.len(), z));
        ok &= line(6, &format!("{name} conditioned marginals at t={t}"), pass, format!("{} of {} accepted", sample.samples.len(), trials));
    }
    {
        let name = "birth-death d=2 n=1 a=2 b=1";
        let spec = GeneratorSpec::birth_death(2, 1, 0.5, 2.0, 1.0).unwrap();
        let space = StateSpace::new(&spec).unwrap();
        let m = RateMatrix::killed_generator(&space);
        let init = Config::empty(spec.width());
        let times = [0.5, 1.0, 2.0];
        let z = normal_quantile(1.0 - 0.025 / (times.len() * spec.width()) as f64);
        let mut pass = true;
        for (k, &t) in times.iter().enumerate() {
            let law = DistVec::new(m.expm_apply(&DistVec::point(space.len(), space.index_of(&init).unwrap()).weights, t, true).values);
            let ex = exact_marginals(&space, &law);
            let states = time_t_states(&spec, &init, t, trials, 300 + k as u64).unwrap();
            let emp = empirical_marginals(&states, spec.width());
            pass &= states.len() == trials && emp.iter().zip(&ex).all(|(e, &p)| within(e.mean, p, trials, z));
        }
        ok &= line(6, &format!("{name} time-t marginals from empty"), pass, format!("t in {times:?}"));
    }
    ok &= timed(6, "runtime", Duration::from_secs(600), start);
    assert!(ok);
}

fn six_site_a1(ranges: Vec<(i32, i32)>) -> GeneratorSpec {
    let lat = LatticeBox::with_ranges(ranges, false).unwrap();
    let pat = Pattern::origin(&lat).unwrap();
    GeneratorSpec::new(Model::Ssep, 0.5, lat, Some(pat)).unwrap()
}

#[test]
fn criterion_7_hprocess() {
    let start = Instant::now();
    let mut ok = true;
    // (system, interior limit asserted)
    for (name, spec, interior) in [("6-site beta=3 A2", beta_spec(3.0), true), ("6-site 2x3 A1", six_site_a1(vec![(0, 1), (-1, 1)]), false)] {
        let space = StateSpace::new(&spec).unwrap();
        let sp = principal_dirichlet(&space).unwrap();
        let hp = HProcess::build(&space, &sp).unwrap();
        let grid: Vec<f64> = [0.0, 1.0, 4.0, 8.0, 12.0, 16.0, 20.0].iter().map(|m| m / sp.lambda).collect();
        let mart = martingale_check(&hp, &grid);
        let worst = mart.rows.iter().map(|r| r.deviation).fold(0.0, f64::max);
        ok &= line(7, &format!("{name} E[Z_t] = 1"), mart.pass, format!("max deviation {worst:.2e}"));
        let rev = hp.reversibility_defect();
        ok &= line(7, &format!("{name} mu-hat reversibility"), rev <= 1e-12, format!("{rev:.2e}"));
        let probes = standard_probes(&space);
        let multiples = [4.0, 8.0, 12.0, 16.0, 20.0];
        for kind in [LimitKind::Window, LimitKind::Endpoint, LimitKind::Interior, LimitKind::InitialWindow, LimitKind::FinalWindow] {
            let rep = gap_report(&hp, kind, &probes, 1.0 / sp.lambda, &multiples, 1e-6).unwrap();
            let gaps: Vec<String> = rep.rows.iter().map(|r| format!("{:.1e}", r.max_gap)).collect();
            let label = format!("{name} {} {:?}", rep.key, kind);
            if kind == LimitKind::Interior && !interior {
                let longer = gap_report(&hp, kind, &probes, 1.0 / sp.lambda, &[24.0, 28.0, 32.0], 1e-6).unwrap();
                let more: Vec<String> = longer.rows.iter().map(|r| format!("lt={}:{:.1e}", r.lambda_t, r.max_gap)).collect();
                println!(
                    "criterion 7 | INFO | {label} | gap/lambda {:.2}, gaps {} then {}",
                    sp.gap_estimate / sp.lambda,
                    gaps.join(" "),
                    more.join(" ")
                );
                continue;
            }
            ok &= line(7, &label, rep.pass, format!("gaps {}", gaps.join(" ")));
        }
    }
    let space = StateSpace::new(&GeneratorSpec::ssep_a1(1, 1, 0.5).unwrap()).unwrap();
    let hp = HProcess::build(&space, &principal_dirichlet(&space).unwrap()).unwrap();
    let p = distinguishing_probe(&hp);
    ok &= line(7, "3-site mu vs mu-hat distinguished", p.found, format!("{}: {:.6} vs {:.6}", p.probe, p.mu_mean, p.mu_hat_mean));
    ok &= timed(7, "runtime", Duration::from_secs(120), start);
    assert!(ok);
}

#[test]
fn criterion_8_determinism() {
    let mut ok = true;
    let spec = GeneratorSpec::ssep_a1(2, 1, 0.5).unwrap();
    let grid = [0.0, 0.5, 1.0, 2.0];
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| serde_json::to_string(&survival_curve(&spec, &grid, 5_000, 77).unwrap()).unwrap())
    };
    let (a, b, c) = (run(1), run(1), run(3));
    ok &= line(8, "survival curve rerun", a == b, format!("{} bytes", a.len()));
    ok &= line(8, "survival curve across worker counts", a == c, "1 vs 3 workers");
    let beta = beta_spec(3.0);
    let w = a2_weights(&beta);
    let runc = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| serde_json::to_string(&coupling_trials(&beta, &w, 2.0, 500, 5, CouplingMode::Naive).unwrap()).unwrap())
    };
    ok &= line(8, "coupling trials across worker counts", runc(1) == runc(2), "");
    let space = StateSpace::new(&spec).unwrap();
    let e1 = serde_json::to_string(&check_gap_decay(&space, &grid).unwrap()).unwrap();
    let e2 = serde_json::to_string(&check_gap_decay(&space, &grid).unwrap()).unwrap();
    ok &= line(8, "exact report rerun", e1 == e2, "");
    assert!(ok);
}
