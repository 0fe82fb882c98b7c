//! Problem interface shared by every solver in the crate.
//!
//! A [`ProblemModel`] exposes an incomplete-data log-likelihood `l(θ)` and the
//! Kullback-Leibler proximal penalty `I(θ̄, θ)` between the complete-data
//! posteriors at `θ̄` and `θ`, each with analytic first and second
//! derivatives. Penalty derivatives are always taken with respect to the
//! second slot `θ`; the anchor `θ̄` is held fixed.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite, non-empty parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(DVector<f64>);

impl ParameterVector {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("empty parameter vector".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "coordinate {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    /// Uniform vector `[value; len]`.
    pub fn uniform(len: usize, value: f64) -> Result<Self> {
        Self::new(DVector::from_element(len, value))
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    /// Raise every coordinate to at least `floor`.
    pub fn clamped(mut self, floor: f64) -> Self {
        for v in self.0.iter_mut() {
            if *v < floor {
                *v = floor;
            }
        }
        self
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }
}

impl Deref for ParameterVector {
    type Target = DVector<f64>;

    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ParameterVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(DVector::from_vec(values))
    }
}

/// Likelihood plus Kullback proximal penalty, with analytic derivatives.
///
/// Implementations must be pure functions of their arguments.
pub trait ProblemModel {
    /// Number of parameters `p`.
    fn dim(&self) -> usize;

    fn log_likelihood(&self, theta: &ParameterVector) -> Result<f64>;

    fn grad_log_likelihood(&self, theta: &ParameterVector) -> Result<DVector<f64>>;

    fn hess_log_likelihood(&self, theta: &ParameterVector) -> Result<DMatrix<f64>>;

    /// `I(θ̄, θ)`: zero at `θ = θ̄` and nonnegative everywhere on the domain.
    fn kl_penalty(&self, theta_bar: &ParameterVector, theta: &ParameterVector) -> Result<f64>;

    /// Gradient of `I(θ̄, ·)` evaluated at `θ`.
    fn grad_kl_penalty(&self, theta_bar: &ParameterVector, theta: &ParameterVector) -> Result<DVector<f64>>;

    /// Hessian of `I(θ̄, ·)` evaluated at `θ`.
    fn hess_kl_penalty(&self, theta_bar: &ParameterVector, theta: &ParameterVector) -> Result<DMatrix<f64>>;

    /// Maximizer of `l(θ) − I(θ̄, θ)` when it has a closed form.
    fn closed_form_em_update(&self, _theta_bar: &ParameterVector) -> Result<Option<ParameterVector>> {
        Ok(None)
    }

    /// Positivity floor `γ` for models restricted to `θᵢ ≥ γ`.
    fn domain_floor(&self) -> Option<f64> {
        None
    }

    /// EM surrogate `Q(θ, θ̄)`, possibly up to a `θ`-independent constant.
    fn q_function(&self, _theta: &ParameterVector, _theta_bar: &ParameterVector) -> Result<f64> {
        Err(Error::QFunctionUnavailable)
    }

    fn in_domain(&self, theta: &DVector<f64>) -> bool {
        theta.len() == self.dim()
            && theta.iter().all(|v| v.is_finite())
            && self
                .domain_floor()
                .is_none_or(|floor| theta.iter().all(|&v| v >= floor))
    }
}

/// `Q(θ, θ̄) − [l(θ) − l(θ̄) − I(θ̄, θ)]`.
///
/// For a surrogate defined up to an additive constant this is constant in `θ`
/// for fixed `θ̄`.
pub fn decomposition_gap<M: ProblemModel + ?Sized>(
    model: &M,
    theta: &ParameterVector,
    theta_bar: &ParameterVector,
) -> Result<f64> {
    let q = model.q_function(theta, theta_bar)?;
    let bracket =
        model.log_likelihood(theta)? - model.log_likelihood(theta_bar)? - model.kl_penalty(theta_bar, theta)?;
    Ok(q - bracket)
}

/// `I(θ̄, θ) − [l(θ) − l(θ̄) − Q(θ, θ̄) + Q(θ̄, θ̄)]`, zero when the surrogate,
/// likelihood and penalty are consistent.
pub fn decomposition_residual<M: ProblemModel + ?Sized>(
    model: &M,
    theta: &ParameterVector,
    theta_bar: &ParameterVector,
) -> Result<f64> {
    Ok(decomposition_gap(model, theta_bar, theta_bar)? - decomposition_gap(model, theta, theta_bar)?)
}

/// Rule producing the relaxation parameter `β_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RelaxationSchedule {
    Constant {
        beta0: f64,
    },
    Geometric {
        beta0: f64,
        ratio: f64,
    },
    /// `β` is chosen by the trust-region loop, not by iteration count.
    TrustRegionDriven,
}

impl RelaxationSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RelaxationSchedule::Constant { beta0 } if !(beta0 > 0.0 && beta0.is_finite()) => Err(Error::InvalidConfig(
                format!("constant schedule needs beta0 > 0, got {beta0}"),
            )),
            RelaxationSchedule::Geometric { beta0, ratio } => {
                if !(beta0 > 0.0 && beta0.is_finite()) {
                    Err(Error::InvalidConfig(format!(
                        "geometric schedule needs beta0 > 0, got {beta0}"
                    )))
                } else if !(ratio > 0.0 && ratio < 1.0) {
                    Err(Error::InvalidConfig(format!(
                        "geometric schedule needs 0 < ratio < 1, got {ratio}"
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// `β_k` for an iteration-driven schedule. Geometric values are held at the
/// smallest normal `f64` instead of underflowing to zero.
pub fn beta_at(schedule: &RelaxationSchedule, k: usize) -> Result<f64> {
    match *schedule {
        RelaxationSchedule::Constant { beta0 } => Ok(beta0),
        RelaxationSchedule::Geometric { beta0, ratio } => {
            Ok((beta0 * ratio.powi(k.min(i32::MAX as usize) as i32)).max(f64::MIN_POSITIVE))
        }
        RelaxationSchedule::TrustRegionDriven => Err(Error::ExternallyDrivenSchedule),
    }
}

/// `l(θ) = bᵀθ − ½θᵀAθ` with penalty `I(θ̄, θ) = ½(θ−θ̄)ᵀB(θ−θ̄)`.
///
/// This is the Gaussian case: both `A` and `B` symmetric positive definite,
/// and the KPP step is a linear solve. Used for sanity checks and examples.
#[derive(Debug, Clone)]
pub struct ConcaveQuadratic {
    linear: DVector<f64>,
    curvature: DMatrix<f64>,
    penalty: DMatrix<f64>,
}

impl ConcaveQuadratic {
    pub fn new(linear: DVector<f64>, curvature: DMatrix<f64>, penalty: DMatrix<f64>) -> Result<Self> {
        let p = linear.len();
        if p == 0 {
            return Err(Error::InvalidModel("empty model".into()));
        }
        for (name, m) in [("curvature", &curvature), ("penalty", &penalty)] {
            if m.nrows() != p || m.ncols() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: m.nrows(),
                });
            }
            if m.clone().cholesky().is_none() {
                return Err(Error::InvalidModel(format!("{name} matrix is not positive definite")));
            }
        }
        Ok(Self {
            linear,
            curvature,
            penalty,
        })
    }

    /// `l(θ) = −‖θ‖²/2`, `I(θ̄, θ) = ‖θ−θ̄‖²/2`.
    pub fn isotropic(p: usize) -> Result<Self> {
        Self::new(DVector::zeros(p), DMatrix::identity(p, p), DMatrix::identity(p, p))
    }

    /// Unique maximizer `A⁻¹b`.
    pub fn maximizer(&self) -> DVector<f64> {
        self.curvature
            .clone()
            .cholesky()
            .expect("checked at construction")
            .solve(&self.linear)
    }

    fn check_dim(&self, theta: &ParameterVector) -> Result<()> {
        if theta.len() != self.linear.len() {
            return Err(Error::DimensionMismatch {
                expected: self.linear.len(),
                got: theta.len(),
            });
        }
        Ok(())
    }
}

impl ProblemModel for ConcaveQuadratic {
    fn dim(&self) -> usize {
        self.linear.len()
    }

    fn log_likelihood(&self, theta: &ParameterVector) -> Result<f64> {
        self.check_dim(theta)?;
        let t = theta.as_vector();
        Ok(self.linear.dot(t) - 0.5 * t.dot(&(&self.curvature * t)))
    }

    fn grad_log_likelihood(&self, theta: &ParameterVector) -> Result<DVector<f64>> {
        self.check_dim(theta)?;
        Ok(&self.linear - &self.curvature * theta.as_vector())
    }

    fn hess_log_likelihood(&self, theta: &ParameterVector) -> Result<DMatrix<f64>> {
        self.check_dim(theta)?;
        Ok(-self.curvature.clone())
    }

    fn kl_penalty(&self, theta_bar: &ParameterVector, theta: &ParameterVector) -> Result<f64> {
        self.check_dim(theta)?;
        self.check_dim(theta_bar)?;
        let d = theta.as_vector() - theta_bar.as_vector();
        Ok(0.5 * d.dot(&(&self.penalty * &d)))
    }

    fn grad_kl_penalty(&self, theta_bar: &ParameterVector, theta: &ParameterVector) -> Result<DVector<f64>> {
        self.check_dim(theta)?;
        self.check_dim(theta_bar)?;
        Ok(&self.penalty * (theta.as_vector() - theta_bar.as_vector()))
    }

    fn hess_kl_penalty(&self, theta_bar: &ParameterVector, theta: &ParameterVector) -> Result<DMatrix<f64>> {
        self.check_dim(theta)?;
        self.check_dim(theta_bar)?;
        Ok(self.penalty.clone())
    }

    fn closed_form_em_update(&self, theta_bar: &ParameterVector) -> Result<Option<ParameterVector>> {
        self.check_dim(theta_bar)?;
        let lhs = &self.curvature + &self.penalty;
        let rhs = &self.linear + &self.penalty * theta_bar.as_vector();
        let next = lhs.cholesky().ok_or(Error::SubproblemIllPosed)?.solve(&rhs);
        ParameterVector::new(next).map(Some)
    }
}
