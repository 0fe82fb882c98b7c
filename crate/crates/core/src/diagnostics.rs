//! Central finite-difference checks for the analytic derivatives of a
//! [`ProblemModel`].
//!
//! Errors are reported as `|analytic − numeric| / max(1, |analytic|, |numeric|)`,
//! which is relative for large entries and absolute for entries below one.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{ParameterVector, ProblemModel};

/// Default base step; each coordinate uses `h · max(1, |θᵢ|)`.
pub const DEFAULT_STEP: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Perturbation pair `θ ± hᵢeᵢ`, shrinking `hᵢ` once by a factor 10 if either
/// point leaves the domain.
fn perturb<M: ProblemModel + ?Sized>(
    model: &M,
    theta: &ParameterVector,
    i: usize,
    h: f64,
) -> Result<(ParameterVector, ParameterVector, f64)> {
    let scale = theta[i].abs().max(1.0);
    for step in [h * scale, h * scale / 10.0] {
        let mut plus = theta.as_vector().clone();
        let mut minus = theta.as_vector().clone();
        plus[i] += step;
        minus[i] -= step;
        if model.in_domain(&plus) && model.in_domain(&minus) {
            return Ok((ParameterVector::new(plus)?, ParameterVector::new(minus)?, step));
        }
    }
    Err(Error::DomainTooTight { coordinate: i })
}

/// Numerical gradient of a scalar function by central differences.
pub fn central_gradient<M, F>(model: &M, theta: &ParameterVector, h: f64, f: F) -> Result<DVector<f64>>
where
    M: ProblemModel + ?Sized,
    F: Fn(&ParameterVector) -> Result<f64>,
{
    let mut out = DVector::zeros(theta.len());
    for i in 0..theta.len() {
        let (plus, minus, step) = perturb(model, theta, i, h)?;
        out[i] = (f(&plus)? - f(&minus)?) / (2.0 * step);
    }
    Ok(out)
}

/// Numerical Jacobian of a vector function by central differences; column `i`
/// holds the derivative along `eᵢ`.
pub fn central_jacobian<M, F>(model: &M, theta: &ParameterVector, h: f64, f: F) -> Result<DMatrix<f64>>
where
    M: ProblemModel + ?Sized,
    F: Fn(&ParameterVector) -> Result<DVector<f64>>,
{
    let p = theta.len();
    let mut out = DMatrix::zeros(p, p);
    for i in 0..p {
        let (plus, minus, step) = perturb(model, theta, i, h)?;
        let col = (f(&plus)? - f(&minus)?) / (2.0 * step);
        out.set_column(i, &col);
    }
    Ok(out)
}

fn max_error<'a>(analytic: impl Iterator<Item = &'a f64>, numeric: impl Iterator<Item = &'a f64>) -> f64 {
    analytic
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Max error between `∇l` and central differences of `l`.
pub fn check_gradient<M: ProblemModel + ?Sized>(model: &M, theta: &ParameterVector, h: f64) -> Result<f64> {
    let analytic = model.grad_log_likelihood(theta)?;
    let numeric = central_gradient(model, theta, h, |t| model.log_likelihood(t))?;
    Ok(max_error(analytic.iter(), numeric.iter()))
}

/// Max error between `∇²l` and central differences of `∇l`.
pub fn check_hessian<M: ProblemModel + ?Sized>(model: &M, theta: &ParameterVector, h: f64) -> Result<f64> {
    let analytic = model.hess_log_likelihood(theta)?;
    let numeric = central_jacobian(model, theta, h, |t| model.grad_log_likelihood(t))?;
    Ok(max_error(analytic.iter(), numeric.iter()))
}

/// Max error between `∇I(θ̄, ·)` and central differences of `I(θ̄, ·)` at `θ`.
pub fn check_kl_gradient<M: ProblemModel + ?Sized>(
    model: &M,
    theta_bar: &ParameterVector,
    theta: &ParameterVector,
    h: f64,
) -> Result<f64> {
    let analytic = model.grad_kl_penalty(theta_bar, theta)?;
    let numeric = central_gradient(model, theta, h, |t| model.kl_penalty(theta_bar, t))?;
    Ok(max_error(analytic.iter(), numeric.iter()))
}

pub fn check_kl_hessian<M: ProblemModel + ?Sized>(
    model: &M,
    theta_bar: &ParameterVector,
    theta: &ParameterVector,
    h: f64,
) -> Result<f64> {
    let analytic = model.hess_kl_penalty(theta_bar, theta)?;
    let numeric = central_jacobian(model, theta, h, |t| model.grad_kl_penalty(theta_bar, t))?;
    Ok(max_error(analytic.iter(), numeric.iter()))
}

/// All four checks at once, as `[∇l, ∇²l, ∇I, ∇²I]`.
pub fn check_all<M: ProblemModel + ?Sized>(
    model: &M,
    theta_bar: &ParameterVector,
    theta: &ParameterVector,
    h: f64,
) -> Result<[f64; 4]> {
    Ok([
        check_gradient(model, theta, h)?,
        check_hessian(model, theta, h)?,
        check_kl_gradient(model, theta_bar, theta, h)?,
        check_kl_hessian(model, theta_bar, theta, h)?,
    ])
}
