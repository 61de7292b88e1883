use pbs_core::error_calculus::{DiffusionSpec, Probe};
use pbs_core::pricing::{pnl_moments, vanna_time_integral};
use pbs_core::simulator::*;
use pbs_core::*;

fn market() -> MarketSpec {
    MarketSpec::new(100.0, 100.0, 1.0, 0.2).unwrap()
}

fn config(n_paths: usize, n_steps: usize, draws: usize, seed: u64) -> SimConfig {
    let es = ErrorStructure::new(0.2, 0.002, 0.004, 0.01).unwrap();
    let mut cfg = SimConfig::new(market(), es, n_paths, draws, seed);
    cfg.n_steps = n_steps;
    cfg
}

#[test]
fn conditional_means_match_premium_difference() {
    let cfg = config(20_000, 128, 8, 11);
    let res = simulate_pnl(&cfg).unwrap();
    let base = bs_price(&market()).unwrap();
    let mut z_max: f64 = 0.0;
    for ((&s, &mean), &se) in res
        .sigma_draws
        .iter()
        .zip(&res.conditional_means)
        .zip(&res.conditional_std_errors)
    {
        let target = bs_price(&market().with_sigma(s)).unwrap() - base;
        z_max = z_max.max((mean - target).abs() / se);
    }
    // 8 draws; a 4 SE bound keeps the family-wise false alarm rate small
    assert!(z_max < 4.0, "{z_max}");
}

#[test]
fn degenerate_error_structure_has_no_bias() {
    let mut cfg = config(40_000, 64, 4, 3);
    cfg.es = ErrorStructure::new(0.2, 0.0, 0.0, 0.01).unwrap();
    let res = simulate_pnl(&cfg).unwrap();
    assert!(res.sigma_draws.iter().all(|&s| s == 0.2));
    // only hedging noise remains across draws
    let noise = res.conditional_std_errors.iter().map(|s| s * s).sum::<f64>() / 4.0;
    assert!(res.variance_est.value < 10.0 * noise);
    for (&mean, &se) in res.conditional_means.iter().zip(&res.conditional_std_errors) {
        assert!(mean.abs() < 4.0 * se, "{mean} {se}");
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let cfg = config(3_000, 32, 70, 5);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate_pnl(&cfg).unwrap())
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a, b);
    let other = simulate_pnl(&SimConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a.bias_est.value, other.bias_est.value);
}

#[test]
fn vanna_integral_matches_quadrature() {
    let m = market();
    let target = m.sigma0 * m.sigma0 * vanna_time_integral(&m, 64).unwrap();
    let est = estimate_upsilon2(&config(40_000, 256, 1, 9)).unwrap();
    let diff = est.integral.value - target;
    assert!(
        diff.abs() < 3.0 * est.integral.std_error + 0.01 * target,
        "{} vs {target} (se {})",
        est.integral.value,
        est.integral.std_error
    );
    let moments = pnl_moments(&config(1, 1, 1, 0).es, &m, &HFunction::identity(), 64).unwrap();
    let gap = est.upsilon2.value - moments.upsilon2;
    assert!(gap.abs() < 3.0 * est.upsilon2.std_error + 0.01 * moments.upsilon2);
}

#[test]
fn vanna_integral_is_not_negligible_at_short_maturity() {
    let m = MarketSpec::new(100.0, 100.0, 0.01, 0.2).unwrap();
    let es = ErrorStructure::new(0.2, 0.0, 0.004, 0.01).unwrap();
    let mut cfg = SimConfig::new(m, es, 40_000, 1, 21);
    cfg.n_steps = 256;
    let est = estimate_upsilon2(&cfg).unwrap();
    let vega = bs_greeks(&m).unwrap().vega;
    let ratio = est.integral.value / (vega * vega);
    assert!(ratio > 0.1, "{ratio}");
}

#[test]
fn frozen_coefficient_gap_vanishes_linearly() {
    let sigma = 0.3;
    let spec = DiffusionSpec::new(move |x: f64| sigma * x, |_| 0.0, 1.0).unwrap();
    let id = Probe::new(|x| x, |_| 1.0, |_| 0.0);
    let grid = [0.4, 0.2, 0.1, 0.05];
    let pts = lemma_small_t_check(&spec, &id, &grid, 20_000, 64, 2).unwrap();
    for p in &pts {
        let want = sigma.powi(4) * p.t / 2.0;
        assert!(
            (p.statistic.value - want).abs() < 4.0 * p.statistic.std_error + 0.05 * want,
            "{p:?}"
        );
    }
    assert!(pts.windows(2).all(|w| w[1].statistic.value < w[0].statistic.value));
    assert!(pts[3].statistic.value < pts[0].statistic.value / 2.0);
}

#[test]
fn refining_the_hedge_keeps_the_bias() {
    let coarse = simulate_pnl(&config(8_000, 64, 64, 13)).unwrap();
    let fine = simulate_pnl(&config(8_000, 128, 64, 13)).unwrap();
    // same σ-draws, so the premium part cancels and only hedging noise differs
    assert_eq!(coarse.sigma_draws, fine.sigma_draws);
    let se = coarse.bias_est.std_error.hypot(fine.bias_est.std_error);
    assert!((coarse.bias_est.value - fine.bias_est.value).abs() < 4.0 * se);
    assert!(fine.diagnostics.within_draw_variance < coarse.diagnostics.within_draw_variance);
}

#[test]
fn conditional_means_are_skewed_like_the_premium() {
    // out of the money C(σ) is convex in σ, so the across-draw law is right-skewed
    let m = market().with_strike(130.0);
    assert!(bs_greeks(&m).unwrap().vomma > 0.0);
    let es = ErrorStructure::new(0.2, 0.0, 0.04, 0.01).unwrap();
    let mut cfg = SimConfig::new(m, es, 2_000, 1_024, 17);
    cfg.n_steps = 16;
    let res = simulate_pnl(&cfg).unwrap();
    assert!(res.diagnostics.skewness > 0.15, "{}", res.diagnostics.skewness);
}

#[test]
fn rejects_mismatched_structure() {
    let mut cfg = config(10, 4, 1, 0);
    cfg.es = ErrorStructure::new(0.25, 0.0, 0.01, 0.01).unwrap();
    assert!(matches!(simulate_pnl(&cfg), Err(PbsError::Argument(_))));
}
