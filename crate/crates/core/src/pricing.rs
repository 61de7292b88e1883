//! Bias and variance of the hedging P&L under an uncertain trader volatility,
//! the bias of the call premium with its strike and maturity derivatives, the
//! relative-index conditions that shape the smile, and bid/mid/ask quotes.
//!
//! Two parameterizations are in use. Hedging P&L moments perturb the
//! volatility `σ` itself. Strike-space formulas perturb the cumulated
//! volatility `σ√T`. For a time-independent `σ`,
//!
//! ```text
//! A[σ√T] = √T·A[σ]      Γ[σ√T] = T·Γ[σ]
//! ```
//!
//! and maturity derivatives hold `A[σ]` and `Γ[σ]` fixed, which keeps the
//! relative index constant across maturities.

use std::sync::OnceLock;

use gauss_quad::{GaussHermite, GaussLegendre};
use serde::{Deserialize, Serialize};

use crate::black_scholes::{bs_greeks, bs_price, MarketSpec};
use crate::error::{argument, domain, Result};
use crate::error_calculus::ErrorStructure;
use crate::normal;

/// Relative tolerance used to decide that a strike is at the money or that a
/// relative index sits on a threshold.
pub const BOUNDARY_TOLERANCE: f64 = 1e-12;

/// Second-order description of the trader's evaluation function near zero:
/// `h(p) ≈ h1·p + ½·h2·p²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HFunction {
    pub h1: f64,
    pub h2: f64,
}

impl HFunction {
    pub fn new(h1: f64, h2: f64) -> Result<Self> {
        if !(h1.is_finite() && h2.is_finite()) || h1 == 0.0 {
            return Err(argument(format!(
                "h'(0) must be finite and non-zero, h''(0) finite (got {h1}, {h2})"
            )));
        }
        Ok(Self { h1, h2 })
    }

    pub fn identity() -> Self {
        Self { h1: 1.0, h2: 0.0 }
    }

    /// Builds `h` from `h'(0)` and the supply/demand asymmetry `h''(0)/h'(0)`.
    pub fn from_asymmetry(h1: f64, r_sd: f64) -> Result<Self> {
        Self::new(h1, r_sd * h1)
    }

    /// Supply/demand asymmetry index `h''(0)/h'(0)`.
    pub fn asymmetry(&self) -> f64 {
        self.h2 / self.h1
    }

    #[inline]
    pub fn apply(&self, p: f64) -> f64 {
        self.h1 * p + 0.5 * self.h2 * p * p
    }
}

impl Default for HFunction {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PnLMoments {
    pub upsilon1: f64,
    pub upsilon2: f64,
    pub lambda: f64,
    /// `h1·Υ₁ + ½·h2·Υ₂`
    pub bias: f64,
    /// `h1²·Λ`
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quote {
    pub bid: f64,
    pub mid: f64,
    pub ask: f64,
    pub alpha: f64,
}

impl Quote {
    pub fn spread(&self) -> f64 {
        self.ask - self.bid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrikeDerivs {
    pub da_dk: f64,
    pub d2a_dk2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaturityDerivs {
    pub da_dt: f64,
    pub d2a_dkdt: f64,
    /// Only available at the money.
    pub d3a_dk2dt: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmileThresholds {
    /// `σ₀²T/4`: the at-the-money bias is positive above it.
    pub atm_bias: f64,
    /// `Θ(σ₀√T)`: the bias is convex in strike at the money below it.
    pub convexity: f64,
    /// Threshold on the ATM slope growing with maturity; `None` when `σ₀²T = 4`.
    pub slope_time: Option<f64>,
    /// The ATM convexity grows with maturity above it.
    pub smile_time: f64,
}

/// Flags set when the relative index equals a threshold within
/// [`BOUNDARY_TOLERANCE`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BoundaryFlags {
    pub atm_bias: bool,
    pub convexity: bool,
    pub slope_time: bool,
    pub smile_time: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmileConditionReport {
    pub r_r: f64,
    pub atm_bias: f64,
    pub atm_bias_positive: bool,
    pub atm_convex: bool,
    pub slope_increases_with_t: bool,
    pub smile_increases_with_t: bool,
    pub thresholds: SmileThresholds,
    pub boundary: BoundaryFlags,
}

/// Error structure on `σ√T` equivalent to `es` on `σ`.
pub fn to_cumulated(es: &ErrorStructure, maturity: f64) -> ErrorStructure {
    let sqrt_t = maturity.sqrt();
    ErrorStructure {
        value: es.value * sqrt_t,
        bias: es.bias * sqrt_t,
        variance: es.variance * maturity,
        epsilon: es.epsilon,
    }
}

/// Inverse of [`to_cumulated`].
pub fn from_cumulated(es: &ErrorStructure, maturity: f64) -> ErrorStructure {
    let sqrt_t = maturity.sqrt();
    ErrorStructure {
        value: es.value / sqrt_t,
        bias: es.bias / sqrt_t,
        variance: es.variance / maturity,
        epsilon: es.epsilon,
    }
}

/// Bias that gives relative index `r_r` for the given value and variance.
pub fn bias_for_relative_index(value: f64, r_r: f64, variance: f64) -> f64 {
    r_r * variance / (2.0 * value)
}

/// Error structure on `σ√T` at maturity `T` for a constant relative index
/// `r_r` and a fixed variance density `Γ[σ]` on the volatility.
pub fn constant_relative_index(
    sigma0: f64,
    maturity: f64,
    r_r: f64,
    variance_on_sigma: f64,
    epsilon: f64,
) -> Result<ErrorStructure> {
    let v = sigma0 * maturity.sqrt();
    let variance = variance_on_sigma * maturity;
    ErrorStructure::new(v, bias_for_relative_index(v, r_r, variance), variance, epsilon)
}

/// `r_r(X) = 2·X·A[X]/Γ[X]`; free of `ε`.
pub fn relative_index(es: &ErrorStructure) -> Result<f64> {
    if !(es.variance > 0.0) {
        return Err(domain("relative index needs a strictly positive variance"));
    }
    Ok(2.0 * es.value * es.bias / es.variance)
}

fn check_cumulated(es: &ErrorStructure, m: &MarketSpec) -> Result<f64> {
    m.validate()?;
    let v = m.total_vol();
    if (es.value - v).abs() > BOUNDARY_TOLERANCE * v.max(1.0) {
        return Err(argument(format!(
            "error structure value {} is not the cumulated volatility σ₀√T = {v}",
            es.value
        )));
    }
    Ok(v)
}

fn gauss_hermite_64() -> &'static GaussHermite {
    static RULE: OnceLock<GaussHermite> = OnceLock::new();
    RULE.get_or_init(|| GaussHermite::new(64).expect("64 nodes is a valid degree"))
}

/// `E[S_t²·(∂²C/∂σ∂x)²]` at time `t`, with the vanna evaluated at the
/// remaining maturity `T - t` and `S_t` lognormal under `σ₀`.
///
/// With `b = sqrt(t/(T-t))` the integrand is a Gaussian bump of width `1/b` in
/// the driving normal. For `b <= 1` Gauss-Hermite runs on the driving normal;
/// otherwise it runs on `d₂` itself, where the integrand is
/// `K²·d₂²·φ(d₂)²/σ₀²` against the (wide) law of `d₂`.
pub fn vanna_moment(m: &MarketSpec, t: f64) -> f64 {
    let (x, k, big_t, sigma) = (m.spot, m.strike, m.maturity, m.sigma0);
    let tau = big_t - t;
    if tau <= 0.0 {
        return 0.0;
    }
    let v = sigma * tau.sqrt();
    let s = sigma * t.sqrt();
    let gh = gauss_hermite_64();
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    if s <= v {
        let sum = gh.integrate(|u| {
            let z = std::f64::consts::SQRT_2 * u;
            let st = x * (s * z - 0.5 * s * s).exp();
            let d1 = (st / k).ln() / v + 0.5 * v;
            let vanna = -(d1 - v) * normal::pdf(d1) / sigma;
            st * st * vanna * vanna
        });
        sum * inv_sqrt_pi
    } else {
        // d₂ ~ N(a, b²)
        let a = ((x / k).ln() - 0.5 * sigma * sigma * big_t) / v;
        let b = s / v;
        let scale = k * k / (2.0 * std::f64::consts::PI * sigma * sigma);
        gh.integrate(|y| scale * y * y * normal::pdf((y - a) / b) / b)
    }
}

/// `∫₀ᵀ E[S_t²·(∂²C/∂σ∂x)²] dt`.
///
/// The substitution `t = T - u²` removes the square-root behaviour at
/// expiry; the `u`-integral uses `n_quad`-point Gauss-Legendre.
pub fn vanna_time_integral(m: &MarketSpec, n_quad: usize) -> Result<f64> {
    m.validate()?;
    let gl = GaussLegendre::new(n_quad).map_err(|e| argument(format!("Gauss-Legendre rule: {e}")))?;
    let t = m.maturity;
    Ok(gl.integrate(0.0, t.sqrt(), |u| 2.0 * u * vanna_moment(m, t - u * u)))
}

/// Minimum number of Gauss-Legendre nodes accepted by [`pnl_moments`].
pub const MIN_QUAD_NODES: usize = 16;

/// `(Υ₁, Υ₂, Λ)` and the bias/variance of `E[h(P&L)]` for an error structure
/// on the volatility whose reference value is the true `σ₀`.
pub fn pnl_moments(es: &ErrorStructure, m: &MarketSpec, h: &HFunction, n_quad: usize) -> Result<PnLMoments> {
    m.validate()?;
    if (es.value - m.sigma0).abs() > BOUNDARY_TOLERANCE {
        return Err(argument(format!(
            "error structure value {} differs from σ₀ = {}",
            es.value, m.sigma0
        )));
    }
    if n_quad < MIN_QUAD_NODES {
        return Err(argument(format!(
            "n_quad must be at least {MIN_QUAD_NODES}, got {n_quad}"
        )));
    }
    let g = bs_greeks(m)?;
    let gamma = es.variance;
    let upsilon1 = g.vega * es.bias + 0.5 * g.vomma * gamma;
    let lambda = g.vega * g.vega * gamma;
    let upsilon2 = if gamma == 0.0 {
        0.0
    } else {
        let integral = vanna_time_integral(m, n_quad)?;
        (g.vega * g.vega + m.sigma0 * m.sigma0 * integral) * gamma
    };
    Ok(PnLMoments {
        upsilon1,
        upsilon2,
        lambda,
        bias: h.h1 * upsilon1 + 0.5 * h.h2 * upsilon2,
        variance: h.h1 * h.h1 * lambda,
    })
}

/// Bias of the call premium for an error structure on `σ√T`:
/// `x·φ(d₁)·{A + d₁d₂/(2σ₀√T)·Γ}`.
pub fn call_bias(es: &ErrorStructure, m: &MarketSpec) -> Result<f64> {
    let v = check_cumulated(es, m)?;
    let (d1, d2) = m.d1_d2();
    Ok(m.spot * normal::pdf(d1) * (es.bias + d1 * d2 / (2.0 * v) * es.variance))
}

/// First and second strike derivatives of [`call_bias`].
pub fn bias_strike_derivs(es: &ErrorStructure, m: &MarketSpec) -> Result<StrikeDerivs> {
    let v = check_cumulated(es, m)?;
    let (x, k) = (m.spot, m.strike);
    let (d1, d2) = m.d1_d2();
    let pdf1 = normal::pdf(d1);
    let (a, g) = (es.bias, es.variance);
    let bias = x * pdf1 * (a + d1 * d2 / (2.0 * v) * g);
    let da_dk = d1 * bias / (k * v) - x / (2.0 * k * v * v) * pdf1 * (d1 + d2) * g;
    let d2a_dk2 =
        d2 / (k * v) * da_dk - x / (k * k * v * v) * pdf1 * (a + (d1 * d1 + 2.0 * d1 * d2 - 2.0) / (2.0 * v) * g);
    Ok(StrikeDerivs { da_dk, d2a_dk2 })
}

/// Maturity derivatives of [`call_bias`] holding the error structure on `σ`
/// fixed (constant relative index).
pub fn bias_maturity_derivs(es: &ErrorStructure, m: &MarketSpec) -> Result<MaturityDerivs> {
    let v = check_cumulated(es, m)?;
    let (x, k, t) = (m.spot, m.strike, m.maturity);
    let (d1, d2) = m.d1_d2();
    let pdf1 = normal::pdf(d1);
    let (a, g) = (es.bias, es.variance);
    let p = d1 * d2;
    let s = d1 + d2;
    let da_dt = x / (2.0 * t) * pdf1 * ((1.0 + p) * a + (4.0 * p * p - 3.0 * v * v - s * s) / (8.0 * v) * g);
    let d2a_dkdt = x * pdf1 / (2.0 * t * k * v)
        * (-d2 * (1.0 - d1 * d1) * a
            + (4.0 * d1.powi(3) * d2 * d2 - 3.0 * d1 * v * v + s * (4.0 - 9.0 * p - d1 * d1)) / (8.0 * v) * g);
    let d3a_dk2dt = m.is_at_the_money().then(|| {
        let y = v * v;
        (-y / 8.0).exp() / (x * y * t * normal::sqrt_2pi())
            * ((16.0 + y * y) / 32.0 * a - (y * (y - 4.0).powi(2) + 128.0) / 256.0 * g / v)
    });
    Ok(MaturityDerivs {
        da_dt,
        d2a_dkdt,
        d3a_dk2dt,
    })
}

/// Upper bound `Θ(σ₀√T) = (σ₀⁴T² + 4σ₀²T + 32)/(4σ₀²T + 16)` on the relative
/// index for a convex ATM bias.
pub fn theta_bound(total_vol: f64) -> f64 {
    let y = total_vol * total_vol;
    (y * y + 4.0 * y + 32.0) / (4.0 * y + 16.0)
}

/// Relative index at which the ATM bias (and its strike slope) vanishes.
pub fn atm_bias_threshold(total_vol: f64) -> f64 {
    total_vol * total_vol / 4.0
}

/// Relative index at which `∂²A/∂K∂T` vanishes at the money:
/// `σ₀²T·(12 - σ₀²T) / (4·(4 - σ₀²T))`. Undefined at `σ₀²T = 4`.
pub fn slope_time_threshold(total_vol: f64) -> Option<f64> {
    let y = total_vol * total_vol;
    (y != 4.0).then(|| y * (12.0 - y) / (4.0 * (4.0 - y)))
}

/// Relative index above which `∂³A/∂K²∂T` is positive at the money.
pub fn smile_time_threshold(total_vol: f64) -> f64 {
    let y = total_vol * total_vol;
    0.25 * (y * (y - 4.0).powi(2) + 128.0) / (16.0 + y * y)
}

fn on_boundary(r: f64, threshold: f64) -> bool {
    (r - threshold).abs() <= BOUNDARY_TOLERANCE * threshold.abs().max(1.0)
}

pub fn smile_conditions(es: &ErrorStructure, m: &MarketSpec) -> Result<SmileConditionReport> {
    let v = check_cumulated(es, m)?;
    let r_r = relative_index(es)?;
    let atm = m.with_strike(m.spot);
    let atm_bias = call_bias(es, &atm)?;
    let thresholds = SmileThresholds {
        atm_bias: atm_bias_threshold(v),
        convexity: theta_bound(v),
        slope_time: slope_time_threshold(v),
        smile_time: smile_time_threshold(v),
    };
    let y = v * v;
    let slope_increases_with_t = match thresholds.slope_time {
        Some(th) if y < 4.0 => r_r > th,
        Some(th) => r_r < th,
        None => false,
    };
    Ok(SmileConditionReport {
        r_r,
        atm_bias,
        atm_bias_positive: r_r > thresholds.atm_bias,
        atm_convex: r_r < thresholds.convexity,
        slope_increases_with_t,
        smile_increases_with_t: r_r > thresholds.smile_time,
        thresholds,
        boundary: BoundaryFlags {
            atm_bias: on_boundary(r_r, thresholds.atm_bias),
            convexity: on_boundary(r_r, thresholds.convexity),
            slope_time: thresholds.slope_time.is_some_and(|th| on_boundary(r_r, th)),
            smile_time: on_boundary(r_r, thresholds.smile_time),
        },
    })
}

/// Bid/mid/ask premiums at risk level `alpha ∈ (0, 0.5)` for an error
/// structure on the volatility.
pub fn quote(es: &ErrorStructure, m: &MarketSpec, h: &HFunction, alpha: f64, n_quad: usize) -> Result<Quote> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(argument(format!("alpha must lie in (0, 0.5), got {alpha}")));
    }
    let moments = pnl_moments(es, m, h, n_quad)?;
    let premium = bs_price(m)?;
    let mid = premium + es.epsilon * moments.bias;
    // 𝒩_{1-α} = -𝒩_α, used in this form so that bid + ask = 2·mid.
    let half = (es.epsilon * moments.variance).sqrt() * -normal::quantile(alpha);
    Ok(Quote {
        bid: mid - half,
        mid,
        ask: mid + half,
        alpha,
    })
}
