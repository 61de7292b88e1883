use pbs_core::*;
use proptest::prelude::*;

fn market(x: f64, k: f64, t: f64, s: f64) -> MarketSpec {
    MarketSpec::new(x, k, t, s).unwrap()
}

fn price(x: f64, k: f64, t: f64, s: f64) -> f64 {
    bs_price(&market(x, k, t, s)).unwrap()
}

/// Two levels of Richardson extrapolation on a central difference, error
/// `O(h⁶)`.
fn rich(d: impl Fn(f64) -> f64, h: f64) -> f64 {
    let (a, b, c) = (d(h), d(0.5 * h), d(0.25 * h));
    let r1 = (4.0 * b - a) / 3.0;
    let r2 = (4.0 * c - b) / 3.0;
    (16.0 * r2 - r1) / 15.0
}

/// The premium with its intrinsic part removed on the in-the-money side: the
/// put `K·Φ(-d₂) - x·Φ(-d₁)` when `in_the_money`, the call otherwise. The two
/// differ by `x - K`, invisible to vega, vomma, dual gamma and vanna, but the
/// out-of-the-money form keeps its full relative precision where the call's
/// time value sinks below the resolution of a double.
fn otm_price(in_the_money: bool, x: f64, k: f64, t: f64, s: f64) -> f64 {
    if !in_the_money {
        return price(x, k, t, s);
    }
    let v = s * t.sqrt();
    let d1 = (x / k).ln() / v + 0.5 * v;
    let d2 = d1 - v;
    k * normal::cdf(-d2) - x * normal::cdf(-d1)
}

/// Greeks by Richardson-extrapolated central differences of the premium, with
/// steps shrunk where the price varies on a short scale (deep in or out of the
/// money).
fn fd_greeks(m: &MarketSpec) -> (f64, f64, f64, f64) {
    let (x, k, t, s) = (m.spot, m.strike, m.maturity, m.sigma0);
    let itm = x > k;
    let p = |x: f64, k: f64, s: f64| otm_price(itm, x, k, t, s);
    let (d1, _) = m.d1_d2();
    // The log-premium moves like d₁²·δσ/σ in σ and like d₁·δK/(K·σ√T) in K
    // and x. Steps keep the smallest Richardson move near 0.06 in the tails,
    // where the premium carries ~1e-10 relative rounding, and are capped at
    // 20% (10% in K and x) near the money, where rounding of a nearly linear premium is what
    // limits the second differences; the σ step also stays below 0.05 in σ√T.
    let v = m.total_vol();
    let hs = (s * f64::min(0.2, 0.25 / (1.0 + d1 * d1))).min(0.05 / t.sqrt());
    let hk = k * v * f64::min(0.1, 0.25 / (1.0 + d1.abs()));
    let hx = x * v * f64::min(0.1, 0.25 / (1.0 + d1.abs()));
    let c0 = p(x, k, s);
    let vega = rich(|h| (p(x, k, s + h) - p(x, k, s - h)) / (2.0 * h), hs);
    let vomma = rich(|h| (p(x, k, s + h) - 2.0 * c0 + p(x, k, s - h)) / (h * h), hs);
    let dual_gamma = rich(|h| (p(x, k + h, s) - 2.0 * c0 + p(x, k - h, s)) / (h * h), hk);
    let vanna = rich(
        |a| {
            let b = a / hs * hx;
            (p(x + b, k, s + a) - p(x - b, k, s + a) - p(x + b, k, s - a) + p(x - b, k, s - a)) / (4.0 * a * b)
        },
        hs,
    );
    (vega, vomma, dual_gamma, vanna)
}

#[test]
fn greeks_match_finite_differences_on_grid() {
    let mut worst: f64 = 0.0;
    for i in 0..5 {
        let k = 100.0 * 2f64.powf(-1.0 + 0.5 * i as f64);
        for j in 0..5 {
            let t = 0.1 + 1.9 * j as f64 / 4.0;
            for l in 0..5 {
                let s = 0.1 + 0.1 * l as f64;
                let m = market(100.0, k, t, s);
                let g = bs_greeks(&m).unwrap();
                let (vega, vomma, dual_gamma, vanna) = fd_greeks(&m);
                for (name, a, b) in [
                    ("vega", g.vega, vega),
                    ("vomma", g.vomma, vomma),
                    ("dual_gamma", g.dual_gamma, dual_gamma),
                    ("vanna", g.vanna, vanna),
                ] {
                    let e = ((a - b) / a).abs();
                    assert!(e <= 1e-6, "{name} at K={k} T={t} s={s}: {a} vs {b}");
                    worst = worst.max(e);
                }
            }
        }
    }
    eprintln!("worst relative error {worst:e}");
    assert!(worst < 1e-6);
}

#[test]
fn zero_maturity_and_volatility_are_rejected() {
    assert!(MarketSpec::new(100.0, 100.0, 0.0, 0.2).is_err());
    assert!(MarketSpec::new(100.0, 100.0, 1.0, 0.0).is_err());
    assert!(MarketSpec::new(100.0, -1.0, 1.0, 0.2).is_err());
    assert!(MarketSpec::new(f64::NAN, 100.0, 1.0, 0.2).is_err());
}

#[test]
fn implied_vol_outside_band_is_domain_error() {
    assert!(matches!(implied_vol(0.0, 100.0, 100.0, 1.0), Err(PbsError::Domain(_))));
    assert!(matches!(
        implied_vol(100.0, 100.0, 100.0, 1.0),
        Err(PbsError::Domain(_))
    ));
    assert!(matches!(implied_vol(10.0, 100.0, 90.0, 1.0), Err(PbsError::Domain(_))));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 512, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn implied_vol_inverts_price(k in 50.0..200.0f64, t in 0.05..3.0f64, s in 0.01..2.0f64) {
        let p = price(100.0, k, t, s);
        let intrinsic = (100.0 - k).max(0.0);
        // only where the premium carries enough time value to be invertible in double precision
        prop_assume!(p - intrinsic > 1e-9 && 100.0 - p > 1e-9);
        let iv = implied_vol(p, 100.0, k, t).unwrap();
        let v = bs_greeks(&market(100.0, k, t, s)).unwrap().vega;
        // the attainable accuracy is the price tolerance over vega
        prop_assert!((iv - s).abs() <= 1e-8 * s + 2e-10 * 100.0 / v, "{} {}", iv, s);
    }

    #[test]
    fn premium_bounds_and_monotonicity(k in 20.0..400.0f64, t in 0.01..5.0f64, s in 0.01..1.5f64) {
        let m = market(100.0, k, t, s);
        let g = bs_greeks(&m).unwrap();
        prop_assert!(g.premium >= (100.0 - k).max(0.0) && g.premium <= 100.0);
        prop_assert!(g.vega >= 0.0 && g.dual_gamma >= 0.0);
        prop_assert!(price(100.0, k, t, s * 1.01) >= g.premium);
        prop_assert!(price(100.0, k * 1.01, t, s) <= g.premium);
    }

    #[test]
    fn strict_bounds_away_from_the_tails(k in 50.0..200.0f64, t in 0.1..2.0f64, s in 0.1..0.5f64) {
        // time value above double resolution of the premium
        prop_assume!(market(100.0, k, t, s).d1_d2().0.abs() < 6.0);
        let g = bs_greeks(&market(100.0, k, t, s)).unwrap();
        prop_assert!(g.premium > (100.0 - k).max(0.0) && g.premium < 100.0);
        prop_assert!(g.vega > 0.0 && g.dual_gamma > 0.0);
    }

    #[test]
    fn atm_density_identity(k in 30.0..300.0f64, t in 0.05..3.0f64, s in 0.05..1.0f64) {
        // S·φ(d₁) = K·φ(d₂)
        let m = market(100.0, k, t, s);
        let (d1, d2) = m.d1_d2();
        let a = 100.0 * normal::pdf(d1);
        let b = k * normal::pdf(d2);
        prop_assert!((a - b).abs() <= 1e-12 * a.max(b) + 1e-300);
    }
}
