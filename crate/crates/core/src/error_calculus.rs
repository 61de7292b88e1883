//! Error structures on a parameter and the chain rules that carry bias and
//! variance through smooth functions.
//!
//! A perturbed parameter is described by its reference value together with
//! the bias density `A` and variance density `Γ` evaluated at that value, and
//! a scale `ε`. To first order the perturbed parameter is the Gaussian
//! `value + ε·A + sqrt(ε·Γ)·N`, and for a `C²` function `F`
//!
//! ```text
//! Γ[F] = F'² Γ
//! A[F] = F' A + ½ F'' Γ
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{argument, ensure_finite, Result};

/// Absolute tolerance on covariance asymmetry and negative eigenvalues.
pub const PSD_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStructure {
    pub value: f64,
    pub bias: f64,
    pub variance: f64,
    pub epsilon: f64,
}

impl ErrorStructure {
    pub fn new(value: f64, bias: f64, variance: f64, epsilon: f64) -> Result<Self> {
        for (name, v) in [
            ("value", value),
            ("bias", bias),
            ("variance", variance),
            ("epsilon", epsilon),
        ] {
            if !v.is_finite() {
                return Err(argument(format!("error structure {name} must be finite, got {v}")));
            }
        }
        if variance < 0.0 {
            return Err(argument(format!(
                "error structure variance must be >= 0, got {variance}"
            )));
        }
        if epsilon <= 0.0 {
            return Err(argument(format!("error structure epsilon must be > 0, got {epsilon}")));
        }
        Ok(Self {
            value,
            bias,
            variance,
            epsilon,
        })
    }

    /// First-order mean of the perturbed parameter, `value + ε·A`.
    pub fn mean(&self) -> f64 {
        self.value + self.epsilon * self.bias
    }

    /// First-order standard deviation, `sqrt(ε·Γ)`.
    pub fn std_dev(&self) -> f64 {
        (self.epsilon * self.variance).sqrt()
    }
}

/// A scalar `C²` function with its first two derivatives.
pub trait SmoothFunction {
    fn value(&self, x: f64) -> f64;
    fn first(&self, x: f64) -> f64;
    fn second(&self, x: f64) -> f64;
}

/// Closure-backed [`SmoothFunction`].
pub struct Probe<F, F1, F2> {
    pub f: F,
    pub f1: F1,
    pub f2: F2,
}

impl<F, F1, F2> Probe<F, F1, F2>
where
    F: Fn(f64) -> f64,
    F1: Fn(f64) -> f64,
    F2: Fn(f64) -> f64,
{
    pub fn new(f: F, f1: F1, f2: F2) -> Self {
        Self { f, f1, f2 }
    }
}

impl<F, F1, F2> SmoothFunction for Probe<F, F1, F2>
where
    F: Fn(f64) -> f64,
    F1: Fn(f64) -> f64,
    F2: Fn(f64) -> f64,
{
    fn value(&self, x: f64) -> f64 {
        (self.f)(x)
    }
    fn first(&self, x: f64) -> f64 {
        (self.f1)(x)
    }
    fn second(&self, x: f64) -> f64 {
        (self.f2)(x)
    }
}

/// Derivatives by central differences with step `cbrt(eps_mach)·(|x|+1)`,
/// for functions without a closed-form derivative.
pub struct FiniteDifference<F>(pub F);

impl<F: Fn(f64) -> f64> FiniteDifference<F> {
    fn step(x: f64) -> f64 {
        f64::EPSILON.cbrt() * (x.abs() + 1.0)
    }
}

impl<F: Fn(f64) -> f64> SmoothFunction for FiniteDifference<F> {
    fn value(&self, x: f64) -> f64 {
        (self.0)(x)
    }
    fn first(&self, x: f64) -> f64 {
        let h = Self::step(x);
        ((self.0)(x + h) - (self.0)(x - h)) / (2.0 * h)
    }
    fn second(&self, x: f64) -> f64 {
        let h = Self::step(x);
        ((self.0)(x + h) - 2.0 * (self.0)(x) + (self.0)(x - h)) / (h * h)
    }
}

/// Bias and variance of `F(σ)` at the reference point.
pub fn propagate_scalar(probe: &impl SmoothFunction, es: &ErrorStructure) -> Result<ErrorStructure> {
    let x = es.value;
    let f0 = ensure_finite("F(x0)", probe.value(x))?;
    let f1 = ensure_finite("F'(x0)", probe.first(x))?;
    let f2 = ensure_finite("F''(x0)", probe.second(x))?;
    Ok(ErrorStructure {
        value: f0,
        bias: f1 * es.bias + 0.5 * f2 * es.variance,
        variance: f1 * f1 * es.variance,
        epsilon: es.epsilon,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiErrorStructure {
    value: DVector<f64>,
    bias: DVector<f64>,
    covariance: DMatrix<f64>,
    epsilon: f64,
}

impl MultiErrorStructure {
    pub fn new(value: Vec<f64>, bias: Vec<f64>, covariance: DMatrix<f64>, epsilon: f64) -> Result<Self> {
        let d = value.len();
        if d == 0 {
            return Err(argument("multi-dimensional error structure needs d >= 1"));
        }
        if bias.len() != d || covariance.nrows() != d || covariance.ncols() != d {
            return Err(argument(format!(
                "dimension mismatch: value {d}, bias {}, covariance {}x{}",
                bias.len(),
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(argument(format!("epsilon must be finite and > 0, got {epsilon}")));
        }
        if value
            .iter()
            .chain(bias.iter())
            .chain(covariance.iter())
            .any(|v| !v.is_finite())
        {
            return Err(argument("all entries must be finite"));
        }
        let asym = (&covariance - covariance.transpose()).amax();
        if asym > PSD_TOLERANCE {
            return Err(argument(format!(
                "covariance is not symmetric (max |γ - γᵀ| = {asym:e})"
            )));
        }
        let min_eig = covariance.clone().symmetric_eigen().eigenvalues.min();
        if min_eig < -PSD_TOLERANCE {
            return Err(argument(format!(
                "covariance is not positive semidefinite (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self {
            value: DVector::from_vec(value),
            bias: DVector::from_vec(bias),
            covariance,
            epsilon,
        })
    }

    pub fn dim(&self) -> usize {
        self.value.len()
    }

    pub fn value(&self) -> &DVector<f64> {
        &self.value
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// A `C²` function on `ℝᵈ` with gradient and Hessian.
pub trait SmoothField {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// Closure-backed [`SmoothField`].
pub struct FieldProbe<F, G, H> {
    pub dim: usize,
    pub f: F,
    pub grad: G,
    pub hess: H,
}

impl<F, G, H> SmoothField for FieldProbe<F, G, H>
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
    H: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &DVector<f64>) -> f64 {
        (self.f)(x)
    }
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.grad)(x)
    }
    fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.hess)(x)
    }
}

/// `bias = A·∇F + ½ Σ γ_ik ∂²F/∂x_i∂x_k`, `variance = ∇Fᵀ γ ∇F`.
pub fn propagate_multi(probe: &impl SmoothField, es: &MultiErrorStructure) -> Result<ErrorStructure> {
    let d = es.dim();
    if probe.dim() != d {
        return Err(argument(format!(
            "probe dimension {} does not match error structure dimension {d}",
            probe.dim()
        )));
    }
    let x = &es.value;
    let f0 = ensure_finite("F(x0)", probe.value(x))?;
    let grad = probe.gradient(x);
    let hess = probe.hessian(x);
    if grad.len() != d || hess.nrows() != d || hess.ncols() != d {
        return Err(argument("probe gradient/Hessian have the wrong shape"));
    }
    if grad.iter().chain(hess.iter()).any(|v| !v.is_finite()) {
        return Err(crate::error::domain("non-finite derivative at the reference point"));
    }
    let convexity = es.covariance.component_mul(&hess).sum();
    let bias = es.bias.dot(&grad) + 0.5 * convexity;
    let variance = grad.dot(&(&es.covariance * &grad));
    Ok(ErrorStructure {
        value: f0,
        bias,
        variance,
        epsilon: es.epsilon,
    })
}

/// `dX = a(X) dB + b(X) dt` started at `x0`.
pub struct DiffusionSpec<A, B> {
    pub a: A,
    pub b: B,
    pub x0: f64,
}

impl<A, B> DiffusionSpec<A, B>
where
    A: Fn(f64) -> f64,
    B: Fn(f64) -> f64,
{
    pub fn new(a: A, b: B, x0: f64) -> Result<Self> {
        if !(x0.is_finite() && a(x0).is_finite() && b(x0).is_finite()) {
            return Err(argument("diffusion coefficients must be finite at x0"));
        }
        Ok(Self { a, b, x0 })
    }
}

/// Bias (generator) and variance (quadratic variation) of `F(X_t)` per unit
/// time at `t = 0`: `(F' b + ½ F'' a², F'² a²)`.
pub fn diffusion_perturbation<A, B>(spec: &DiffusionSpec<A, B>, probe: &impl SmoothFunction) -> Result<(f64, f64)>
where
    A: Fn(f64) -> f64,
    B: Fn(f64) -> f64,
{
    let x0 = spec.x0;
    let a = ensure_finite("a(x0)", (spec.a)(x0))?;
    let b = ensure_finite("b(x0)", (spec.b)(x0))?;
    let f1 = ensure_finite("F'(x0)", probe.first(x0))?;
    let f2 = ensure_finite("F''(x0)", probe.second(x0))?;
    Ok((f1 * b + 0.5 * f2 * a * a, f1 * f1 * a * a))
}

/// `value + ε·A + sqrt(ε·Γ)·draw`.
pub fn perturbed_sample(es: &ErrorStructure, gaussian_draw: f64) -> f64 {
    es.mean() + es.std_dev() * gaussian_draw
}

#[cfg(test)]
mod tests {
    use super::*;

    fn es(v: f64, a: f64, g: f64, e: f64) -> ErrorStructure {
        ErrorStructure::new(v, a, g, e).unwrap()
    }

    #[test]
    fn identity_is_a_fixed_point() {
        let p = Probe::new(|x| x, |_| 1.0, |_| 0.0);
        let out = propagate_scalar(&p, &es(0.2, 0.1, 0.04, 0.01)).unwrap();
        assert_eq!(out, es(0.2, 0.1, 0.04, 0.01));
    }

    #[test]
    fn square_has_pure_convexity_bias() {
        let p = Probe::new(|x| x * x, |x| 2.0 * x, |_| 2.0);
        let out = propagate_scalar(&p, &es(1.0, 0.0, 1.0, 0.3)).unwrap();
        assert_eq!(out.bias, 1.0);
        assert_eq!(out.variance, 4.0);
    }

    #[test]
    fn non_finite_derivative_is_a_domain_error() {
        let p = Probe::new(
            |x: f64| x.sqrt(),
            |x: f64| 0.5 / x.sqrt(),
            |x: f64| -0.25 * x.powf(-1.5),
        );
        let err = propagate_scalar(&p, &es(0.0, 0.0, 1.0, 0.1)).unwrap_err();
        assert!(matches!(err, crate::PbsError::Domain(_)));
    }

    #[test]
    fn rejects_invalid_structures() {
        assert!(ErrorStructure::new(0.2, 0.0, -1e-3, 0.01).is_err());
        assert!(ErrorStructure::new(0.2, 0.0, 0.1, 0.0).is_err());
        assert!(ErrorStructure::new(f64::NAN, 0.0, 0.1, 0.1).is_err());
    }

    #[test]
    fn perturbed_sample_points() {
        let e = es(0.2, 0.1, 0.04, 0.01);
        assert!((perturbed_sample(&e, 0.0) - 0.201).abs() < 1e-15);
        assert!((perturbed_sample(&e, 1.0) - 0.221).abs() < 1e-15);
    }

    #[test]
    fn linear_field_has_no_convexity_term() {
        let p = FieldProbe {
            dim: 2,
            f: |x: &DVector<f64>| x[0] + x[1],
            grad: |_: &DVector<f64>| DVector::from_vec(vec![1.0, 1.0]),
            hess: |_: &DVector<f64>| DMatrix::zeros(2, 2),
        };
        let m = MultiErrorStructure::new(vec![0.3, -1.0], vec![0.7, -0.2], DMatrix::identity(2, 2), 0.1).unwrap();
        let out = propagate_multi(&p, &m).unwrap();
        assert!((out.bias - 0.5).abs() < 1e-15);
        assert!((out.variance - 2.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_argument_error() {
        let p = FieldProbe {
            dim: 3,
            f: |_: &DVector<f64>| 0.0,
            grad: |_: &DVector<f64>| DVector::zeros(3),
            hess: |_: &DVector<f64>| DMatrix::zeros(3, 3),
        };
        let m = MultiErrorStructure::new(vec![1.0, 1.0], vec![0.0, 0.0], DMatrix::identity(2, 2), 1.0).unwrap();
        assert!(matches!(propagate_multi(&p, &m), Err(crate::PbsError::Argument(_))));
    }

    #[test]
    fn covariance_checks() {
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(MultiErrorStructure::new(vec![0.0; 2], vec![0.0; 2], asym, 1.0).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(MultiErrorStructure::new(vec![0.0; 2], vec![0.0; 2], indefinite, 1.0).is_err());
        // singular but PSD is fine
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(MultiErrorStructure::new(vec![0.0; 2], vec![0.0; 2], singular, 1.0).is_ok());
    }

    #[test]
    fn brownian_identity() {
        let spec = DiffusionSpec::new(|_| 1.0, |_| 0.0, 3.7).unwrap();
        let p = Probe::new(|x| x, |_| 1.0, |_| 0.0);
        assert_eq!(diffusion_perturbation(&spec, &p).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn log_of_driftless_gbm() {
        let spec = DiffusionSpec::new(|x| x, |_| 0.0, 1.0).unwrap();
        let p = Probe::new(|x: f64| x.ln(), |x| 1.0 / x, |x| -1.0 / (x * x));
        let (bias, var) = diffusion_perturbation(&spec, &p).unwrap();
        assert_eq!(bias, -0.5);
        assert_eq!(var, 1.0);
    }

    #[test]
    fn finite_difference_probe_tracks_closed_form() {
        let fd = FiniteDifference(|x: f64| x.exp());
        let x = 0.7;
        assert!((fd.first(x) / x.exp() - 1.0).abs() < 1e-9);
        assert!((fd.second(x) / x.exp() - 1.0).abs() < 1e-5);
    }
}
