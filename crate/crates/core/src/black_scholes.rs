//! Driftless, zero-rate Black-Scholes call: price, greeks and implied volatility.

use serde::{Deserialize, Serialize};

use crate::error::{argument, domain, PbsError, Result};
use crate::normal;

/// Spot, strike, maturity (years) and the true volatility `σ₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    pub spot: f64,
    pub strike: f64,
    pub maturity: f64,
    pub sigma0: f64,
}

impl MarketSpec {
    pub fn new(spot: f64, strike: f64, maturity: f64, sigma0: f64) -> Result<Self> {
        let m = Self {
            spot,
            strike,
            maturity,
            sigma0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("spot", self.spot),
            ("strike", self.strike),
            ("maturity", self.maturity),
            ("sigma0", self.sigma0),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(argument(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn with_strike(self, strike: f64) -> Self {
        Self { strike, ..self }
    }

    pub fn with_maturity(self, maturity: f64) -> Self {
        Self { maturity, ..self }
    }

    pub fn with_sigma(self, sigma0: f64) -> Self {
        Self { sigma0, ..self }
    }

    /// Cumulated volatility `σ₀√T`.
    pub fn total_vol(&self) -> f64 {
        self.sigma0 * self.maturity.sqrt()
    }

    /// `(d₁, d₂)`.
    pub fn d1_d2(&self) -> (f64, f64) {
        let v = self.total_vol();
        let d1 = (self.spot / self.strike).ln() / v + 0.5 * v;
        (d1, d1 - v)
    }

    pub fn is_at_the_money(&self) -> bool {
        ((self.strike - self.spot) / self.spot).abs() <= 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Greeks {
    pub premium: f64,
    /// ∂C/∂x
    pub delta: f64,
    /// ∂C/∂σ
    pub vega: f64,
    /// ∂²C/∂σ²
    pub vomma: f64,
    /// ∂²C/∂σ∂x
    pub vanna: f64,
    /// ∂²C/∂K²
    pub dual_gamma: f64,
    pub d1: f64,
    pub d2: f64,
}

pub fn bs_price(m: &MarketSpec) -> Result<f64> {
    m.validate()?;
    Ok(price_unchecked(m.spot, m.strike, m.total_vol()))
}

/// Call price as a function of the cumulated volatility `v = σ√T`.
#[inline]
pub(crate) fn price_unchecked(spot: f64, strike: f64, v: f64) -> f64 {
    let d1 = (spot / strike).ln() / v + 0.5 * v;
    let d2 = d1 - v;
    if spot > strike {
        // intrinsic plus the put, so the premium never rounds below intrinsic
        let put = strike * normal::cdf(-d2) - spot * normal::cdf(-d1);
        (spot - strike) + put.max(0.0)
    } else {
        (spot * normal::cdf(d1) - strike * normal::cdf(d2)).max(0.0)
    }
}

pub fn bs_greeks(m: &MarketSpec) -> Result<Greeks> {
    m.validate()?;
    let (d1, d2) = m.d1_d2();
    let sqrt_t = m.maturity.sqrt();
    let pdf1 = normal::pdf(d1);
    let vega = m.spot * sqrt_t * pdf1;
    Ok(Greeks {
        premium: price_unchecked(m.spot, m.strike, m.total_vol()),
        delta: normal::cdf(d1),
        vega,
        vomma: vega * d1 * d2 / m.sigma0,
        vanna: -d2 * pdf1 / m.sigma0,
        dual_gamma: m.spot * pdf1 / (m.strike * m.strike * m.total_vol()),
        d1,
        d2,
    })
}

const IV_MAX_ITER: usize = 100;

/// Volatility that reproduces `price`. Safeguarded Newton on vega with a
/// bisection fallback; the bracket starts at `[0, ∞)` and is tightened on every
/// evaluation.
pub fn implied_vol(price: f64, spot: f64, strike: f64, maturity: f64) -> Result<f64> {
    MarketSpec::new(spot, strike, maturity, 1.0)?;
    let intrinsic = (spot - strike).max(0.0);
    if !(price.is_finite() && price > intrinsic && price < spot) {
        return Err(domain(format!(
            "price {price} outside the no-arbitrage band ({intrinsic}, {spot})"
        )));
    }
    let sqrt_t = maturity.sqrt();
    let accept = 1e-10 * spot;
    let target = 1e-14 * spot;

    // Work in cumulated volatility v = σ√T.
    let f = |v: f64| price_unchecked(spot, strike, v) - price;
    let mut lo = 0.0_f64;
    let mut hi = f64::INFINITY;
    let mut v = ((2.0 * std::f64::consts::PI).sqrt() * price / spot).max(1e-4);

    for _ in 0..IV_MAX_ITER {
        let err = f(v);
        if err.abs() <= target {
            return Ok(v / sqrt_t);
        }
        if err > 0.0 {
            hi = v;
        } else {
            lo = v;
        }
        if hi.is_finite() && hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let d1 = (spot / strike).ln() / v + 0.5 * v;
        let vega = spot * normal::pdf(d1);
        let newton = v - err / vega;
        // Newton is trusted inside the bracket and, while the bracket is
        // open above, within a factor 4 of the current point.
        v = if vega > 0.0 && newton > lo && newton < hi.min(4.0 * v) {
            newton
        } else if !hi.is_finite() {
            2.0 * v
        } else if lo > 0.0 && hi > 4.0 * lo {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
    }
    if f(v).abs() <= accept {
        Ok(v / sqrt_t)
    } else {
        Err(PbsError::Numeric(format!(
            "implied volatility did not converge for price {price} (x={spot}, K={strike}, T={maturity})"
        )))
    }
}
