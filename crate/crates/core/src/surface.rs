//! Implied-volatility smile of the biased mid premium and the equivalent
//! first-order local volatility.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::black_scholes::{bs_greeks, bs_price, implied_vol, MarketSpec};
use crate::error::{argument, PbsError, Result};
use crate::error_calculus::ErrorStructure;
use crate::pricing::{bias_maturity_derivs, bias_strike_derivs, call_bias};

/// Why a smile point has no implied volatility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmileFlag {
    Ok,
    /// Mid at or below the intrinsic value `max(x - K, 0)`.
    BelowIntrinsic,
    /// Mid at or above the spot.
    AboveSpot,
    /// Inversion failed inside the band.
    NoConvergence,
}

impl SmileFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SmileFlag::Ok => "ok",
            SmileFlag::BelowIntrinsic => "below_intrinsic",
            SmileFlag::AboveSpot => "above_spot",
            SmileFlag::NoConvergence => "no_convergence",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmilePoint {
    pub strike: f64,
    pub maturity: f64,
    pub mid_price: f64,
    pub implied_vol: Option<f64>,
    /// `ε·A[C]`
    pub bias_contribution: f64,
    pub flag: SmileFlag,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalVolPoint {
    pub strike: f64,
    pub maturity: f64,
    pub local_variance: f64,
}

/// `n` strikes spaced geometrically between `lo·x` and `hi·x`.
pub fn strike_grid(spot: f64, lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(spot > 0.0 && lo > 0.0 && hi >= lo && lo.is_finite() && hi.is_finite()) || n == 0 || (n == 1 && hi != lo) {
        return Err(argument(format!("invalid strike grid: x={spot}, [{lo}, {hi}], n={n}")));
    }
    if n == 1 {
        return Ok(vec![spot * lo]);
    }
    let step = (hi / lo).ln() / (n - 1) as f64;
    Ok((0..n).map(|i| spot * (lo.ln() + step * i as f64).exp()).collect())
}

/// 41 strikes over `K/x ∈ [0.5, 2]`.
pub fn default_strike_grid(spot: f64) -> Vec<f64> {
    strike_grid(spot, 0.5, 2.0, 41).expect("default grid is valid")
}

/// Smile of `C_BS + ε·A[C]` over `strikes` at the maturity of `m`, for an
/// error structure on `σ√T`. `eps` replaces `es.epsilon` so that `ε = 0` can
/// be evaluated.
pub fn implied_smile(es: &ErrorStructure, m: &MarketSpec, strikes: &[f64], eps: f64) -> Result<Vec<SmilePoint>> {
    check_eps(eps)?;
    m.validate()?;
    strikes
        .par_iter()
        .map(|&k| {
            let mk = m.with_strike(k);
            mk.validate()?;
            let bias = eps * call_bias(es, &mk)?;
            let mid = bs_price(&mk)? + bias;
            let intrinsic = (m.spot - k).max(0.0);
            let (implied_vol, flag) = if !(mid > intrinsic) {
                (None, SmileFlag::BelowIntrinsic)
            } else if !(mid < m.spot) {
                (None, SmileFlag::AboveSpot)
            } else {
                match implied_vol(mid, m.spot, k, m.maturity) {
                    Ok(s) => (Some(s), SmileFlag::Ok),
                    Err(_) => (None, SmileFlag::NoConvergence),
                }
            };
            Ok(SmilePoint {
                strike: k,
                maturity: m.maturity,
                mid_price: mid,
                implied_vol,
                bias_contribution: bias,
                flag,
            })
        })
        .collect()
}

fn check_eps(eps: f64) -> Result<()> {
    if eps.is_finite() && eps >= 0.0 {
        Ok(())
    } else {
        Err(argument(format!("epsilon must be finite and >= 0, got {eps}")))
    }
}

/// Bound on `ε·Γ[σ√T]/(σ₀²T)` for a positive ATM local variance, in the form
/// `{ε·Γ/(σ₀²T)}⁻¹ - (σ₀²T + 2 - 2·r_r)`. Infinite when `ε·Γ = 0`.
pub fn positivity_margin(es: &ErrorStructure, eps: f64) -> f64 {
    let y = es.value * es.value;
    if eps * es.variance == 0.0 {
        return f64::INFINITY;
    }
    let r_r = 2.0 * es.value * es.bias / es.variance;
    y / (eps * es.variance) - (y + 2.0 - 2.0 * r_r)
}

/// First-order local variance at the strike and maturity of `m`:
///
/// ```text
/// σ₀²·{1 + ε/2·[4A/(σ₀√T) - (σ₀²T + 2 - 4·ln(x/K)²/(σ₀²T))·Γ/(σ₀²T)]}
/// ```
///
/// with `ln(x/K)²` the square of the log-moneyness.
pub fn local_vol(es: &ErrorStructure, m: &MarketSpec, eps: f64) -> Result<LocalVolPoint> {
    check_eps(eps)?;
    m.validate()?;
    let v = m.total_vol();
    let y = v * v;
    let l = (m.spot / m.strike).ln();
    let correction = 4.0 * es.bias / v - (y + 2.0 - 4.0 * l * l / y) * es.variance / y;
    let local_variance = m.sigma0 * m.sigma0 * (1.0 + 0.5 * eps * correction);
    if !(local_variance > 0.0) {
        return Err(PbsError::NonPositiveLocalVariance {
            local_variance,
            margin: positivity_margin(es, eps),
        });
    }
    Ok(LocalVolPoint {
        strike: m.strike,
        maturity: m.maturity,
        local_variance,
    })
}

/// Relative step used for the maturity derivative of the Black-Scholes price.
pub const DUPIRE_T_STEP: f64 = 1e-4;

/// Relative gap between the Dupire ratio of the perturbed premium
/// `(C_T + ε·∂A/∂T) / (½K²·(C_KK + ε·∂²A/∂K²))` and [`local_vol`].
///
/// `C_T` is a central difference with relative step `t_step`; `C_KK` and the
/// bias derivatives are closed forms, the maturity one under a constant
/// relative index.
pub fn dupire_check(es: &ErrorStructure, m: &MarketSpec, eps: f64, t_step: f64) -> Result<f64> {
    check_eps(eps)?;
    if !(t_step > 0.0 && t_step < 1.0) {
        return Err(argument(format!("maturity step must lie in (0, 1), got {t_step}")));
    }
    let h = t_step * m.maturity;
    let c_t = (bs_price(&m.with_maturity(m.maturity + h))? - bs_price(&m.with_maturity(m.maturity - h))?) / (2.0 * h);
    let c_kk = bs_greeks(m)?.dual_gamma;
    let a_t = bias_maturity_derivs(es, m)?.da_dt;
    let a_kk = bias_strike_derivs(es, m)?.d2a_dk2;
    let k = m.strike;
    let denominator = 0.5 * k * k * (c_kk + eps * a_kk);
    if denominator.abs() < 1e-14 {
        return Err(PbsError::Numeric(format!(
            "Dupire denominator {denominator} is too small"
        )));
    }
    let ratio = (c_t + eps * a_t) / denominator;
    let first_order = local_vol(es, m, eps)?.local_variance;
    Ok((ratio - first_order) / first_order)
}
