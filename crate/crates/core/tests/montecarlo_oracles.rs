//! Monte Carlo estimators against closed forms and exact linear algebra.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use ssep_core::exact::{conditioned_law, principal_dirichlet, RateMatrix, StateSpace};
use ssep_core::generators::{GeneratorSpec, Model};
use ssep_core::harmonic::{constant_for_a1, constant_for_a2, solve_hitting, solve_hitting_origin, weights, PsiForm, SiteWeights};
use ssep_core::hprocess::{simulate_hprocess, HProcess};
use ssep_core::lattice::{Config, LatticeBox, Pattern};
use ssep_core::montecarlo::{
    coupled_pair, domination_mc, draw_initial, empirical_marginals, fleming_viot, ks_statistic, lambda_fit, psi_path, sample_path, standard_battery,
    survival_curve, wilson_interval, yaglom_compare, CouplingMode, RngStream,
};

fn single_state() -> GeneratorSpec {
    GeneratorSpec::ssep_a1(1, 0, 0.5).unwrap()
}

#[test]
fn single_state_hitting_time_is_exponential() {
    let spec = single_state();
    let n = 100_000;
    let taus: Vec<f64> = (0..n as u64)
        .map(|k| {
            let mut rng = RngStream::new(11, k).rng();
            let init = draw_initial(&spec, &mut rng).unwrap();
            sample_path(&spec, &init, 1e6, &mut rng).unwrap().tau.unwrap()
        })
        .collect();
    // 99% Kolmogorov critical value
    let d = ks_statistic(&taus, |t| 1.0 - (-2.0 * t).exp());
    assert!(d < 1.628 / (n as f64).sqrt(), "KS {d}");
    let mean = taus.iter().sum::<f64>() / n as f64;
    assert!((mean - 0.5).abs() < 4.0 * 0.5 / (n as f64).sqrt());
}

#[test]
fn single_state_lambda_fit_covers_two() {
    let grid: Vec<f64> = (0..=40).map(|k| k as f64 * 0.05).collect();
    let curve = survival_curve(&single_state(), &grid, 100_000, 3).unwrap();
    let fit = lambda_fit(&curve, 0.2, 1.5).unwrap();
    assert!(fit.covers(2.0), "{fit:?}");
}

#[test]
fn stderr_halves_with_four_times_the_trials() {
    let grid: Vec<f64> = (0..=20).map(|k| k as f64 * 0.1).collect();
    let a = lambda_fit(&survival_curve(&single_state(), &grid, 20_000, 5).unwrap(), 0.2, 1.5).unwrap();
    let b = lambda_fit(&survival_curve(&single_state(), &grid, 80_000, 6).unwrap(), 0.2, 1.5).unwrap();
    let ratio = a.stderr / b.stderr;
    assert!((ratio - 2.0).abs() < 0.3, "ratio {ratio}");
}

/// `E_ν[τ]` by solving `−Q m = 1`.
fn mean_hitting_time(space: &StateSpace) -> f64 {
    let m = RateMatrix::killed_generator(space);
    let n = space.len();
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n {
        q[(i, i)] -= m.diag()[i];
        for (j, v) in m.row(i) {
            q[(i, j)] -= v;
        }
    }
    let times = q.lu().solve(&DVector::from_element(n, 1.0)).unwrap();
    let nu = space.nu_dist().normalized();
    nu.weights.iter().zip(times.iter()).map(|(a, b)| a * b).sum()
}

#[test]
fn mean_hitting_time_on_eight_sites() {
    let lat = LatticeBox::with_ranges(vec![(-3, 4)], false).unwrap();
    let spec = GeneratorSpec::new(Model::Ssep, 0.4, lat.clone(), Some(Pattern::origin(&lat).unwrap())).unwrap();
    let exact = mean_hitting_time(&StateSpace::new(&spec).unwrap());
    let n = 40_000;
    let taus: Vec<f64> = (0..n as u64)
        .map(|k| {
            let mut rng = RngStream::new(21, k).rng();
            let init = draw_initial(&spec, &mut rng).unwrap();
            sample_path(&spec, &init, 1e4, &mut rng).unwrap().tau.expect("absorbed well before the horizon")
        })
        .collect();
    let mean = taus.iter().sum::<f64>() / n as f64;
    let sd = (taus.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let z = (mean - exact) / (sd / (n as f64).sqrt());
    assert!(z.abs() < 3.5, "mean {mean} exact {exact} z {z}");
}

fn bernoulli(width: usize, p: f64, n: usize, seed: u64) -> Vec<Config> {
    (0..n as u64)
        .map(|k| {
            let mut rng = RngStream::new(seed, k).rng();
            let mut c = Config::empty(width);
            for i in 0..width {
                c.set(i, rng.random_bool(p));
            }
            c
        })
        .collect()
}

#[test]
fn domination_battery_on_product_measures() {
    let lat = LatticeBox::cube(1, 2).unwrap();
    let battery = standard_battery(&lat, 10, 7);
    let lo = bernoulli(lat.len(), 0.3, 5000, 1);
    let hi = bernoulli(lat.len(), 0.5, 5000, 2);
    assert_eq!(domination_mc(&lo, &hi, &battery, 0.05).unwrap().violations, 0);
    assert!(domination_mc(&hi, &lo, &battery, 0.05).unwrap().violations > 0);
    let same = bernoulli(lat.len(), 0.4, 5000, 3);
    let same2 = bernoulli(lat.len(), 0.4, 5000, 4);
    assert_eq!(domination_mc(&same, &same2, &battery, 0.05).unwrap().violations, 0);
}

fn beta_system() -> (GeneratorSpec, SiteWeights) {
    let lat = LatticeBox::with_ranges(vec![(0, 1), (-1, 1)], false).unwrap();
    let pat = Pattern::origin_pair(&lat).unwrap();
    let spec = GeneratorSpec::new(Model::BetaBond { beta: 3.0 }, 0.5, lat.clone(), Some(pat.clone())).unwrap();
    let prof = solve_hitting(&lat, pat.sites()).unwrap();
    let w = weights(&prof, constant_for_a2(&prof).unwrap(), 0.5, PsiForm::PatternHole, Some(&pat)).unwrap();
    (spec, w)
}

/// Each coordinate of the ordered coupling is itself the ψ-chain.
#[test]
fn coupling_marginals_match_uncoupled_chain() {
    let (spec, w) = beta_system();
    let width = spec.width();
    let upper = (0..1u64 << width).map(|c| Config::from_code(c, width)).find(|c| c.count() == 3 && !spec.in_pattern(c)).unwrap();
    let lower = Config::from_sites(width, &[upper.occupied().next().unwrap()]);
    assert!(!spec.in_pattern(&lower));
    let n = 20_000;
    let horizon = 0.7;
    let coupled: Vec<(Config, Config)> = (0..n as u64)
        .map(|k| {
            let mut rng = RngStream::new(31, k).rng();
            let o = coupled_pair(&spec, &w, &lower, &upper, horizon, CouplingMode::Ordered, &mut rng).unwrap();
            assert_eq!(o.violations, 0);
            (o.lower, o.upper)
        })
        .collect();
    let solo = |init: &Config, seed: u64| -> Vec<Config> {
        (0..n as u64).map(|k| psi_path(&spec, &w, init, horizon, &mut RngStream::new(seed, k).rng()).unwrap()).collect()
    };
    let (lo_c, up_c): (Vec<Config>, Vec<Config>) = coupled.into_iter().unzip();
    for (a, b) in [(lo_c, solo(&lower, 32)), (up_c, solo(&upper, 33))] {
        let ma = empirical_marginals(&a, width);
        let mb = empirical_marginals(&b, width);
        for (x, y) in ma.iter().zip(&mb) {
            let se = ((x.mean * (1.0 - x.mean) + y.mean * (1.0 - y.mean)) / n as f64).sqrt();
            if se > 0.0 {
                let z = (x.mean - y.mean) / se;
                assert!(z.abs() < 3.5, "site {} z {z}", x.site);
            } else {
                assert_eq!(x.mean, y.mean);
            }
        }
    }
}

#[test]
fn fleming_viot_tracks_conditioned_law() {
    let spec = GeneratorSpec::ssep_a1(1, 2, 0.5).unwrap();
    let space = StateSpace::new(&spec).unwrap();
    let exact = space.site_marginals(&conditioned_law(&space, &space.nu_dist(), 2.0).unwrap());
    let cloud = fleming_viot(&spec, 2.0, 20_000, 8).unwrap();
    for e in empirical_marginals(&cloud, spec.width()) {
        assert!((e.mean - exact[e.site]).abs() < 0.03, "site {} {} vs {}", e.site, e.mean, exact[e.site]);
    }
}

#[test]
fn yaglom_means_sit_between_alpha_and_rho() {
    let spec = GeneratorSpec::ssep_a1(2, 1, 0.5).unwrap();
    let prof = solve_hitting_origin(spec.lattice()).unwrap();
    let w = weights(&prof, constant_for_a1(&prof).unwrap(), 0.5, PsiForm::OriginHole, None).unwrap();
    let rep = yaglom_compare(&spec, &w, 1.0, 100_000, 4).unwrap();
    assert!(rep.pass, "{:#?}", rep.rows.iter().filter(|r| !r.consistent).collect::<Vec<_>>());
    assert!(rep.accepted > 1000, "{}", rep.accepted);
}

#[test]
fn hprocess_occupation_converges_to_mu_hat() {
    let spec = GeneratorSpec::ssep_a1(1, 2, 0.5).unwrap();
    let space = StateSpace::new(&spec).unwrap();
    let hp = HProcess::build(&space, &principal_dirichlet(&space).unwrap()).unwrap();
    let rep = simulate_hprocess(&hp, 60_000.0, 8, 12).unwrap();
    assert!(rep.events > 1_000_000, "{}", rep.events);
    assert!(!rep.entered_pattern);
    assert!(rep.total_variation < 0.01, "TV {}", rep.total_variation);
}

#[test]
fn wilson_interval_edges() {
    assert_eq!(wilson_interval(0, 50).0, 0.0);
    assert_eq!(wilson_interval(50, 50).1, 1.0);
    let (lo, hi) = wilson_interval(500, 1000);
    assert!((lo + hi - 1.0).abs() < 1e-12 && hi - lo < 0.07);
}
