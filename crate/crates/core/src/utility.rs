//! Risk aversion of a utility function and the utilities whose expected value
//! is unbiased under a given error structure.

use std::sync::Arc;

use quadrature::double_exponential;
use serde::{Deserialize, Serialize};

use crate::error::{argument, domain, Result};
use crate::error_calculus::{propagate_scalar, ErrorStructure, SmoothFunction};
use crate::normal;

type Scalar = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A utility `u` with its first two derivatives.
#[derive(Clone)]
pub struct UtilityProbe {
    u: Scalar,
    u1: Scalar,
    u2: Scalar,
}

impl std::fmt::Debug for UtilityProbe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("UtilityProbe")
    }
}

impl UtilityProbe {
    pub fn new(
        u: impl Fn(f64) -> f64 + Send + Sync + 'static,
        u1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        u2: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            u: Arc::new(u),
            u1: Arc::new(u1),
            u2: Arc::new(u2),
        }
    }

    /// `u(x) = x`
    pub fn linear() -> Self {
        Self::new(|x| x, |_| 1.0, |_| 0.0)
    }

    /// `u(x) = -exp(-a·x)`
    pub fn exponential(a: f64) -> Self {
        Self::new(
            move |x| -(-a * x).exp(),
            move |x| a * (-a * x).exp(),
            move |x| -a * a * (-a * x).exp(),
        )
    }

    /// `u(x) = Φ(x/2)`, the utility with relative aversion `x²/4`.
    pub fn half_normal_cdf() -> Self {
        Self::new(
            |x| normal::cdf(0.5 * x),
            |x| 0.5 * normal::pdf(0.5 * x),
            |x| -0.125 * x * normal::pdf(0.5 * x),
        )
    }

    /// Constant relative aversion `c`: `u'(x) = x^(-c)` for `x > 0`.
    pub fn crra(c: f64) -> Self {
        let u = move |x: f64| {
            if !(x > 0.0) {
                f64::NAN
            } else if c == 1.0 {
                x.ln()
            } else {
                x.powf(1.0 - c) / (1.0 - c)
            }
        };
        let u1 = move |x: f64| if x > 0.0 { x.powf(-c) } else { f64::NAN };
        let u2 = move |x: f64| if x > 0.0 { -c * x.powf(-c - 1.0) } else { f64::NAN };
        Self::new(u, u1, u2)
    }

    pub fn u(&self, x: f64) -> f64 {
        (self.u)(x)
    }

    pub fn u1(&self, x: f64) -> f64 {
        (self.u1)(x)
    }

    pub fn u2(&self, x: f64) -> f64 {
        (self.u2)(x)
    }
}

impl SmoothFunction for UtilityProbe {
    fn value(&self, x: f64) -> f64 {
        self.u(x)
    }
    fn first(&self, x: f64) -> f64 {
        self.u1(x)
    }
    fn second(&self, x: f64) -> f64 {
        self.u2(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AversionReport {
    /// Risk price `(σ²/2)·r_a`.
    pub rho: f64,
    /// `-u''/u'`
    pub r_a: f64,
    /// `x·r_a`
    pub r_r: f64,
}

pub fn aversion_indices(u: &UtilityProbe, x: f64, sigma2: f64) -> Result<AversionReport> {
    let u1 = u.u1(x);
    let u2 = u.u2(x);
    if !(u1.is_finite() && u2.is_finite()) || u1 == 0.0 {
        return Err(domain(format!("u'({x}) = {u1}, u''({x}) = {u2}: aversion undefined")));
    }
    let r_a = -u2 / u1;
    Ok(AversionReport {
        rho: 0.5 * sigma2 * r_a,
        r_a,
        r_r: x * r_a,
    })
}

/// Bias `u'·A + ½u''·Γ` of `u(X)` and whether it vanishes, i.e. whether
/// `A = (r_a/2)·Γ`.
pub fn hypothesis_star_check(u: &UtilityProbe, es: &ErrorStructure) -> Result<(f64, bool)> {
    aversion_indices(u, es.value, 0.0)?;
    let bias = propagate_scalar(u, es)?.bias;
    let scale = (u.u1(es.value) * es.bias).abs();
    Ok((bias, bias.abs() <= 1e-12 * scale + 1e-12))
}

/// Relative aversion profile to reproduce.
#[derive(Clone)]
pub enum RelativeIndexTarget {
    /// `x²/4`
    QuarterSquare,
    Zero,
    Constant(f64),
    /// An arbitrary profile on the closed interval `domain`.
    Numeric {
        r_r: Scalar,
        domain: (f64, f64),
    },
}

impl std::fmt::Debug for RelativeIndexTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::QuarterSquare => f.write_str("QuarterSquare"),
            Self::Zero => f.write_str("Zero"),
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Numeric { domain, .. } => write!(f, "Numeric {{ domain: {domain:?} }}"),
        }
    }
}

impl RelativeIndexTarget {
    pub fn numeric(r_r: impl Fn(f64) -> f64 + Send + Sync + 'static, domain: (f64, f64)) -> Self {
        Self::Numeric {
            r_r: Arc::new(r_r),
            domain,
        }
    }
}

/// Relative tolerance of the adaptive quadrature behind numeric targets.
pub const NUMERIC_TOLERANCE: f64 = 1e-10;

/// A utility whose relative aversion is `target`, normalised by `u'(1) = 1`
/// (or `u'` at the domain midpoint when 1 lies outside a numeric domain).
pub fn bias_cancelling_utility(target: RelativeIndexTarget) -> Result<UtilityProbe> {
    match target {
        RelativeIndexTarget::QuarterSquare => Ok(UtilityProbe::half_normal_cdf()),
        RelativeIndexTarget::Zero => Ok(UtilityProbe::linear()),
        RelativeIndexTarget::Constant(c) => {
            if !c.is_finite() {
                return Err(argument(format!("relative aversion must be finite, got {c}")));
            }
            Ok(UtilityProbe::crra(c))
        }
        RelativeIndexTarget::Numeric { r_r, domain: (lo, hi) } => numeric_utility(r_r, lo, hi),
    }
}

fn numeric_utility(r_r: Scalar, lo: f64, hi: f64) -> Result<UtilityProbe> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(argument(format!("invalid utility domain [{lo}, {hi}]")));
    }
    if lo <= 0.0 && hi >= 0.0 {
        let r0 = r_r(0.0);
        if !(r0.is_finite() && r0.abs() <= 1e-12) {
            return Err(domain(format!(
                "relative aversion {r0} at zero makes u''/u' = -r_r(x)/x singular"
            )));
        }
    }
    let anchor = if (lo..=hi).contains(&1.0) { 1.0 } else { 0.5 * (lo + hi) };
    let inside = move |x: f64| x >= lo && x <= hi;

    let ra = r_r.clone();
    // r_r(x)/x, continued at 0 by the derivative of r_r
    let absolute: Scalar = Arc::new(move |x: f64| {
        if x.abs() < 1e-8 {
            let h = 1e-6;
            (ra(h) - ra(-h)) / (2.0 * h)
        } else {
            ra(x) / x
        }
    });

    let a1 = absolute.clone();
    let u1: Scalar = Arc::new(move |x: f64| {
        if !inside(x) {
            return f64::NAN;
        }
        let log_u1 = -double_exponential::integrate(|s| a1(s), anchor, x, NUMERIC_TOLERANCE).integral;
        log_u1.exp()
    });
    let a2 = absolute;
    let u1_for_u2 = u1.clone();
    let u2 = move |x: f64| -a2(x) * u1_for_u2(x);
    let u1_for_u = u1.clone();
    let u = move |x: f64| {
        if !inside(x) {
            return f64::NAN;
        }
        double_exponential::integrate(|s| u1_for_u(s), anchor, x, NUMERIC_TOLERANCE).integral
    };
    Ok(UtilityProbe {
        u: Arc::new(u),
        u1,
        u2: Arc::new(u2),
    })
}
