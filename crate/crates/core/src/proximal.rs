//! Exact Kullback proximal point iterations.
//!
//! Each outer step maximizes `F(θ) = l(θ) − β_k I(θ_k, θ)` with a damped
//! Newton method. Only steps that strictly increase `F` are taken, so
//! `F(θ_{k+1}) ≥ F(θ_k) = l(θ_k)`, which is the margin inequality
//! `l(θ_{k+1}) − l(θ_k) ≥ β_k I(θ_k, θ_{k+1})`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{beta_at, ParameterVector, ProblemModel, RelaxationSchedule};

/// Step halvings allowed per inner Newton iteration.
pub const MAX_HALVINGS: usize = 40;

/// Decrease in `l` tolerated as roundoff before a step counts as non-monotone.
pub const MONOTONE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub schedule: RelaxationSchedule,
    pub max_outer_iters: usize,
    /// Stop when `‖∇l‖∞ ≤ grad_tol`; `None` means `1e-8 · (1 + |l(θ⁰)|)`.
    pub grad_tol: Option<f64>,
    pub inner_max_iters: usize,
    pub inner_tol: f64,
    pub use_closed_form_em_when_beta_is_one: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            schedule: RelaxationSchedule::Constant { beta0: 1.0 },
            max_outer_iters: 500,
            grad_tol: None,
            inner_max_iters: 100,
            inner_tol: 1e-9,
            use_closed_form_em_when_beta_is_one: true,
        }
    }
}

impl SolverConfig {
    pub fn em() -> Self {
        Self::default()
    }

    pub fn geometric(beta0: f64, ratio: f64) -> Self {
        Self {
            schedule: RelaxationSchedule::Geometric { beta0, ratio },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if let Some(tol) = self.grad_tol {
            if !(tol > 0.0 && tol.is_finite()) {
                return Err(Error::InvalidConfig(format!("grad_tol must be positive, got {tol}")));
            }
        }
        if !(self.inner_tol > 0.0 && self.inner_tol.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "inner_tol must be positive, got {}",
                self.inner_tol
            )));
        }
        if self.inner_max_iters == 0 {
            return Err(Error::InvalidConfig("inner_max_iters must be positive".into()));
        }
        Ok(())
    }

    pub fn resolve_grad_tol(&self, initial_log_likelihood: f64) -> f64 {
        self.grad_tol.unwrap_or(1e-8 * (1.0 + initial_log_likelihood.abs()))
    }
}

/// Why a run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIterations,
    /// The iterate stopped moving before the gradient tolerance was met.
    Stalled,
}

/// State `θ_k` and the outer step taken from it.
///
/// The step fields are `None` on the last record of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub k: usize,
    pub theta: ParameterVector,
    pub log_likelihood: f64,
    pub grad_inf: f64,
    pub beta: Option<f64>,
    /// Trust-region radius, for trust-region runs.
    pub delta: Option<f64>,
    /// `‖θ_{k+1} − θ_k‖₂`, zero for rejected trust-region steps.
    pub step_norm: Option<f64>,
    /// `I(θ_k, θ_{k+1})`.
    pub kl_step: Option<f64>,
    pub accepted: Option<bool>,
    pub inner_iters: usize,
    pub inexact: bool,
    /// Seconds since the start of the run when `θ_k` became available.
    pub elapsed: f64,
}

impl IterateRecord {
    fn state(k: usize, theta: ParameterVector, log_likelihood: f64, grad_inf: f64, elapsed: f64) -> Self {
        Self {
            k,
            theta,
            log_likelihood,
            grad_inf,
            beta: None,
            delta: None,
            step_norm: None,
            kl_step: None,
            accepted: None,
            inner_iters: 0,
            inexact: false,
            elapsed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterateTrace {
    pub records: Vec<IterateRecord>,
    pub status: RunStatus,
    pub grad_tol: f64,
}

impl IterateTrace {
    pub fn last(&self) -> &IterateRecord {
        self.records.last().expect("a trace always holds the initial record")
    }

    pub fn final_theta(&self) -> &ParameterVector {
        &self.last().theta
    }

    pub fn converged(&self) -> bool {
        self.status == RunStatus::Converged
    }

    /// Number of outer iterations performed.
    pub fn iterations(&self) -> usize {
        self.records.len() - 1
    }

    /// The distinct iterates: `θ_0` and every state reached by an accepted step.
    pub fn accepted_iterates(&self) -> Vec<&IterateRecord> {
        let mut out = vec![&self.records[0]];
        for w in self.records.windows(2) {
            if w[0].accepted == Some(true) {
                out.push(&w[1]);
            }
        }
        out
    }

    /// Outer iteration count at which the gradient first met the run tolerance.
    pub fn iterations_to_tolerance(&self) -> Option<usize> {
        self.records.iter().find(|r| r.grad_inf <= self.grad_tol).map(|r| r.k)
    }

    /// Worst violation of `l(θ_{k+1}) − l(θ_k) ≥ β_k I(θ_k, θ_{k+1})` over
    /// accepted steps, as `max(0, β I − Δl)`.
    pub fn worst_margin_violation(&self) -> f64 {
        self.records
            .windows(2)
            .filter(|w| w[0].accepted == Some(true))
            .map(|w| {
                let beta = w[0].beta.unwrap_or(0.0);
                let kl = w[0].kl_step.unwrap_or(0.0);
                (beta * kl - (w[1].log_likelihood - w[0].log_likelihood)).max(0.0)
            })
            .fold(0.0, f64::max)
    }

    /// `l` never decreases by more than `slack` from one record to the next.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.records
            .windows(2)
            .all(|w| w[1].log_likelihood >= w[0].log_likelihood - slack)
    }
}

/// Result of one proximal step.
#[derive(Debug, Clone)]
pub struct KppStep {
    pub theta: ParameterVector,
    pub inner_iters: usize,
    /// The inner solver stopped before `‖∇F‖∞ ≤ inner_tol`.
    pub inexact: bool,
    /// `F(θ_{k+1}) − F(θ_k)`.
    pub objective_gain: f64,
}

fn proximal_objective<M: ProblemModel + ?Sized>(
    model: &M,
    anchor: &ParameterVector,
    beta: f64,
    theta: &ParameterVector,
) -> Result<f64> {
    Ok(model.log_likelihood(theta)? - beta * model.kl_penalty(anchor, theta)?)
}

/// Cholesky solve of `A d = b`, shifting `A` by a multiple of the identity
/// until it factors.
pub(crate) fn solve_spd_shifted(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    let scale = a.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut shift = 1e-14 * scale;
    for _ in 0..40 {
        let mut shifted = a.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += shift;
        }
        if let Some(chol) = shifted.cholesky() {
            return Ok(chol.solve(b));
        }
        shift *= 10.0;
    }
    Err(Error::SubproblemIllPosed)
}

/// One exact KPP step: approximately maximize `l(θ) − β I(θ_k, θ)`.
pub fn kpp_step<M: ProblemModel + ?Sized>(
    model: &M,
    theta_k: &ParameterVector,
    beta: f64,
    cfg: &SolverConfig,
) -> Result<KppStep> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "relaxation parameter must be positive, got {beta}"
        )));
    }
    if !model.in_domain(theta_k) {
        return Err(Error::InvalidParameter("starting point outside model domain".into()));
    }
    let start_value = proximal_objective(model, theta_k, beta, theta_k)?;
    let mut theta = theta_k.clone();
    let mut value = start_value;
    let mut converged = false;
    let mut iters = 0;

    while iters < cfg.inner_max_iters {
        let grad = model.grad_log_likelihood(&theta)? - beta * model.grad_kl_penalty(theta_k, &theta)?;
        if grad.amax() <= cfg.inner_tol {
            converged = true;
            break;
        }
        iters += 1;
        let neg_hess = -(model.hess_log_likelihood(&theta)? - beta * model.hess_kl_penalty(theta_k, &theta)?);
        let direction = solve_spd_shifted(&neg_hess, &grad)?;

        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..=MAX_HALVINGS {
            let candidate = theta.as_vector() + t * &direction;
            if model.in_domain(&candidate) {
                let candidate = ParameterVector::new(candidate)?;
                let candidate_value = proximal_objective(model, theta_k, beta, &candidate)?;
                if candidate_value > value {
                    theta = candidate;
                    value = candidate_value;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }

    if value < start_value {
        return Err(Error::MonotonicityViolated {
            before: start_value,
            after: value,
        });
    }
    Ok(KppStep {
        theta,
        inner_iters: iters,
        inexact: !converged,
        objective_gain: value - start_value,
    })
}

/// Iterate [`kpp_step`] with `β_k` from the configured schedule.
pub fn run<M: ProblemModel + ?Sized>(model: &M, theta0: &ParameterVector, cfg: &SolverConfig) -> Result<IterateTrace> {
    cfg.validate()?;
    if matches!(cfg.schedule, RelaxationSchedule::TrustRegionDriven) {
        return Err(Error::ExternallyDrivenSchedule);
    }
    if !model.in_domain(theta0) {
        return Err(Error::InvalidParameter("initial point outside model domain".into()));
    }
    let start = Instant::now();
    let mut theta = theta0.clone();
    let mut log_lik = model.log_likelihood(&theta)?;
    let grad_tol = cfg.resolve_grad_tol(log_lik);
    let mut records = Vec::new();
    let mut k = 0;

    let status = loop {
        let grad_inf = model.grad_log_likelihood(&theta)?.amax();
        records.push(IterateRecord::state(
            k,
            theta.clone(),
            log_lik,
            grad_inf,
            start.elapsed().as_secs_f64(),
        ));
        if grad_inf <= grad_tol {
            break RunStatus::Converged;
        }
        if k >= cfg.max_outer_iters {
            break RunStatus::MaxIterations;
        }

        let beta = beta_at(&cfg.schedule, k)?;
        let closed_form = if beta == 1.0 && cfg.use_closed_form_em_when_beta_is_one {
            model.closed_form_em_update(&theta)?
        } else {
            None
        };
        let step = match closed_form {
            Some(next) => KppStep {
                theta: next,
                inner_iters: 0,
                inexact: false,
                objective_gain: f64::NAN,
            },
            None => kpp_step(model, &theta, beta, cfg)?,
        };

        let next_log_lik = model.log_likelihood(&step.theta)?;
        if next_log_lik < log_lik - MONOTONE_SLACK * (1.0 + log_lik.abs()) {
            return Err(Error::MonotonicityViolated {
                before: log_lik,
                after: next_log_lik,
            });
        }
        let step_norm = (step.theta.as_vector() - theta.as_vector()).norm();
        let record = records.last_mut().expect("pushed above");
        record.beta = Some(beta);
        record.step_norm = Some(step_norm);
        record.kl_step = Some(model.kl_penalty(&theta, &step.theta)?);
        record.accepted = Some(true);
        record.inner_iters = step.inner_iters;
        record.inexact = step.inexact;

        theta = step.theta;
        log_lik = next_log_lik;
        k += 1;
        if step_norm == 0.0 && !matches!(cfg.schedule, RelaxationSchedule::Geometric { .. }) {
            let grad_inf = model.grad_log_likelihood(&theta)?.amax();
            records.push(IterateRecord::state(
                k,
                theta.clone(),
                log_lik,
                grad_inf,
                start.elapsed().as_secs_f64(),
            ));
            break if grad_inf <= grad_tol {
                RunStatus::Converged
            } else {
                RunStatus::Stalled
            };
        }
    };

    Ok(IterateTrace {
        records,
        status,
        grad_tol,
    })
}

/// EM: [`run`] with the constant schedule `β = 1`.
pub fn em_run<M: ProblemModel + ?Sized>(
    model: &M,
    theta0: &ParameterVector,
    cfg: &SolverConfig,
) -> Result<IterateTrace> {
    let cfg = SolverConfig {
        schedule: RelaxationSchedule::Constant { beta0: 1.0 },
        ..cfg.clone()
    };
    run(model, theta0, &cfg)
}
