//! Second-order KPP with trust-region control.
//!
//! At `θ_k` both terms of the proximal objective are replaced by quadratic
//! models: `l̂(θ_k + d) = l(θ_k) + gᵀd + ½dᵀHd` and `Î(d) = ½dᵀI_k d`, where
//! `I_k` is the Hessian of the penalty at `θ_k`. Maximizing `l̂` over the ball
//! `‖d‖_{I_k} ≤ δ` is equivalent to solving `(−H + βI_k) d = g` with the
//! Lagrange multiplier `β` chosen so the constraint is active, so each
//! trust-region step is an approximate KPP step with relaxation `β`.
//!
//! Two drivers are provided: [`TrMode::DeltaDriven`] adapts the radius `δ`
//! and recovers `β` by root finding, [`TrMode::BetaDriven`] adapts `β`
//! directly (grow on rejection, shrink on acceptance).

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParameterVector, ProblemModel};
use crate::proximal::{solve_spd_shifted, IterateRecord, IterateTrace, RunStatus, SolverConfig};

/// Consecutive rejections after which a run gives up.
pub const MAX_CONSECUTIVE_REJECTIONS: usize = 60;

/// Relative accuracy of the active constraint `‖d‖_{I_k} = δ`.
const RADIUS_RTOL: f64 = 1e-10;

/// Predicted gains below `ROUNDOFF_GAIN · (1 + |l|)` cannot be measured.
const ROUNDOFF_GAIN: f64 = 1e-14;

fn symmetrized(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Quadratic expansions of `l` and `I(θ_k, ·)` around `θ_k`.
#[derive(Debug, Clone)]
pub struct QuadraticModel {
    pub center: ParameterVector,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub penalty_hessian: DMatrix<f64>,
}

impl QuadraticModel {
    pub fn new(
        center: ParameterVector,
        value: f64,
        gradient: DVector<f64>,
        hessian: DMatrix<f64>,
        penalty_hessian: DMatrix<f64>,
    ) -> Result<Self> {
        let p = center.len();
        for got in [
            gradient.len(),
            hessian.nrows(),
            hessian.ncols(),
            penalty_hessian.nrows(),
            penalty_hessian.ncols(),
        ] {
            if got != p {
                return Err(Error::DimensionMismatch { expected: p, got });
            }
        }
        Ok(Self {
            center,
            value,
            gradient,
            hessian: symmetrized(hessian),
            penalty_hessian: symmetrized(penalty_hessian),
        })
    }

    fn displacement(&self, theta: &DVector<f64>) -> DVector<f64> {
        theta - self.center.as_vector()
    }

    /// `l̂(θ)`.
    pub fn likelihood(&self, theta: &DVector<f64>) -> f64 {
        self.value + self.predicted_increase(&self.displacement(theta))
    }

    /// `Î(θ) = ½ (θ−θ_k)ᵀ I_k (θ−θ_k)`.
    pub fn penalty(&self, theta: &DVector<f64>) -> f64 {
        let d = self.displacement(theta);
        0.5 * d.dot(&(&self.penalty_hessian * &d))
    }

    /// `gᵀd + ½dᵀHd`.
    pub fn predicted_increase(&self, step: &DVector<f64>) -> f64 {
        self.gradient.dot(step) + 0.5 * step.dot(&(&self.hessian * step))
    }

    /// `−H + βI_k`.
    pub fn shifted_curvature(&self, beta: f64) -> DMatrix<f64> {
        -&self.hessian + beta * &self.penalty_hessian
    }

    /// Maximizer of `l̂(θ_k + d) − β Î(θ_k + d)`.
    pub fn approximate_kpp_step(&self, beta: f64) -> Result<DVector<f64>> {
        solve_spd_shifted(&self.shifted_curvature(beta), &self.gradient)
    }
}

pub fn build_quadratic_model<M: ProblemModel + ?Sized>(model: &M, theta_k: &ParameterVector) -> Result<QuadraticModel> {
    QuadraticModel::new(
        theta_k.clone(),
        model.log_likelihood(theta_k)?,
        model.grad_log_likelihood(theta_k)?,
        model.hess_log_likelihood(theta_k)?,
        model.hess_kl_penalty(theta_k, theta_k)?,
    )
}

/// `√(dᵀ I d)`, the seminorm induced by a positive semidefinite `I`.
pub fn tr_norm(step: &DVector<f64>, penalty_hessian: &DMatrix<f64>) -> f64 {
    step.dot(&(penalty_hessian * step)).max(0.0).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    pub step: DVector<f64>,
    /// Lagrange multiplier of the radius constraint.
    pub beta: f64,
}

/// Maximize `gᵀd + ½dᵀHd` subject to `‖d‖_{I_k} ≤ δ`.
///
/// Requires `−H` positive definite. The multiplier is found by safeguarded
/// Newton iteration on `φ(β) = 1/δ − 1/‖d(β)‖_{I_k}`, which is close to linear
/// in `β`, inside a bisection bracket.
pub fn solve_tr_subproblem(qm: &QuadraticModel, delta: f64) -> Result<SubproblemSolution> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "trust radius must be positive, got {delta}"
        )));
    }
    let penalty = &qm.penalty_hessian;
    // `None` when `−H + βI_k` does not factor: the step is unbounded there.
    let solve = |beta: f64| -> Result<Option<(DVector<f64>, f64, f64)>> {
        let Some(chol) = qm.shifted_curvature(beta).cholesky() else {
            return Ok(None);
        };
        let step = chol.solve(&qm.gradient);
        let norm = tr_norm(&step, penalty);
        // ‖L⁻¹ I d‖² = −‖d‖ · d‖d‖/dβ
        let w = chol
            .l()
            .solve_lower_triangular(&(penalty * &step))
            .ok_or(Error::SubproblemIllPosed)?;
        Ok(Some((step, norm, w.norm_squared())))
    };

    // Complementarity `β |‖d‖ − δ|` is what must be small, not the radius error.
    let on_boundary = |norm: f64, beta: f64| (norm - delta).abs() <= RADIUS_RTOL * delta / beta.max(1.0);

    if let Some((step, norm, _)) = solve(0.0)? {
        if norm <= delta {
            return Ok(SubproblemSolution { step, beta: 0.0 });
        }
    }

    // Bracket: φ(lo) > 0 > φ(hi), with φ(β) = 1/δ − 1/‖d(β)‖.
    let mut lo = 0.0;
    let scale = {
        let h = qm.hessian.diagonal().abs().max();
        let i = penalty.diagonal().abs().max();
        if i > 0.0 {
            (h / i).max(f64::MIN_POSITIVE)
        } else {
            1.0
        }
    };
    let mut hi = 1e-8 * scale;
    let mut tries = 0;
    loop {
        match solve(hi)? {
            Some((step, norm, _)) if on_boundary(norm, hi) => {
                return Ok(SubproblemSolution { step, beta: hi });
            }
            Some((_, norm, _)) if norm < delta => break,
            last => {
                lo = hi;
                hi *= 10.0;
                tries += 1;
                if tries > 80 || !hi.is_finite() {
                    return match last {
                        None => Err(Error::SubproblemIllPosed),
                        Some((_, norm, _)) => Err(Error::BracketFailure {
                            beta: hi,
                            norm,
                            radius: delta,
                        }),
                    };
                }
            }
        }
    }

    let mut beta = 0.5 * (lo + hi);
    let mut last_norm = f64::NAN;
    for _ in 0..300 {
        let Some((step, norm, w2)) = solve(beta)? else {
            lo = beta;
            beta = 0.5 * (lo + hi);
            continue;
        };
        last_norm = norm;
        if on_boundary(norm, beta) {
            return Ok(SubproblemSolution { step, beta });
        }
        let phi = 1.0 / delta - 1.0 / norm;
        if phi > 0.0 {
            lo = lo.max(beta);
        } else {
            hi = hi.min(beta);
        }
        // φ'(β) = −‖w‖² / ‖d‖³
        let newton = if w2 > 0.0 {
            beta + phi * norm.powi(3) / w2
        } else {
            f64::NAN
        };
        if newton.is_finite() && (newton - beta).abs() <= 4.0 * f64::EPSILON * beta {
            return Ok(SubproblemSolution { step, beta });
        }
        beta = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            if let Some((step, _, _)) = solve(hi)? {
                return Ok(SubproblemSolution { step, beta: hi });
            }
        }
    }
    Err(Error::BracketFailure {
        beta,
        norm: last_norm,
        radius: delta,
    })
}

/// Sufficient-increase test: `actual ≥ m · predicted`.
pub fn tr_accept(actual: f64, predicted: f64, m: f64) -> Result<bool> {
    if predicted < 0.0 || predicted.is_nan() {
        return Err(Error::ModelDecrease { predicted });
    }
    Ok(actual >= m * predicted)
}

/// Trust-region parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustRegionState {
    /// Radius `δ` in the `I_k` seminorm.
    pub delta: f64,
    /// Current multiplier; the driving variable in beta-driven mode.
    pub beta: f64,
    /// Acceptance threshold `m`.
    pub accept_ratio: f64,
    /// Expansion threshold `m′`.
    pub expand_ratio: f64,
    /// `γ₁ < 1`.
    pub shrink_factor: f64,
    /// `γ₂ > 1`.
    pub grow_factor: f64,
    /// Beta-driven mode: `β ← β · beta_increase` on rejection.
    pub beta_increase: f64,
    /// Beta-driven mode: `β ← β · beta_decrease` on acceptance.
    pub beta_decrease: f64,
}

impl Default for TrustRegionState {
    fn default() -> Self {
        Self {
            delta: 1.0,
            beta: 1.0,
            accept_ratio: 0.01,
            expand_ratio: 0.9,
            shrink_factor: 0.5,
            grow_factor: 2.0,
            beta_increase: 1.6,
            beta_decrease: 0.5,
        }
    }
}

impl TrustRegionState {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be nonnegative, got {}", self.beta));
        }
        if !(0.0 < self.accept_ratio && self.accept_ratio < self.expand_ratio && self.expand_ratio < 1.0) {
            return bad(format!(
                "need 0 < m < m' < 1, got m = {}, m' = {}",
                self.accept_ratio, self.expand_ratio
            ));
        }
        if !(0.0 < self.shrink_factor && self.shrink_factor < 1.0 && self.grow_factor > 1.0) {
            return bad(format!(
                "need 0 < gamma1 < 1 < gamma2, got {} and {}",
                self.shrink_factor, self.grow_factor
            ));
        }
        if !(self.beta_increase > 1.0 && 0.0 < self.beta_decrease && self.beta_decrease < 1.0) {
            return bad(format!(
                "need beta_increase > 1 > beta_decrease > 0, got {} and {}",
                self.beta_increase, self.beta_decrease
            ));
        }
        Ok(())
    }
}

/// Next radius from the gain ratio `ρ = actual / predicted`.
///
/// Each branch takes the midpoint of its admissible interval:
/// `ρ ≤ m → γ₁δ/2`, `m < ρ < m′ → (γ₁+1)δ/2`, `ρ ≥ m′ → (1+γ₂)δ/2`.
pub fn update_delta(state: &TrustRegionState, actual: f64, predicted: f64) -> Result<f64> {
    if predicted <= 0.0 || predicted.is_nan() {
        return Err(Error::ModelDecrease { predicted });
    }
    let rho = actual / predicted;
    let delta = state.delta;
    Ok(if rho <= state.accept_ratio || rho.is_nan() {
        0.5 * state.shrink_factor * delta
    } else if rho < state.expand_ratio {
        0.5 * (state.shrink_factor + 1.0) * delta
    } else {
        0.5 * (1.0 + state.grow_factor) * delta
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrMode {
    DeltaDriven,
    BetaDriven,
}

/// Trust-region KPP loop.
///
/// Rows of the returned trace include rejected (null) steps, flagged with
/// `accepted = Some(false)` and `step_norm = Some(0.0)`. `cfg.schedule` is
/// ignored; only the iteration limit and gradient tolerance are used.
pub fn run_tr<M: ProblemModel + ?Sized>(
    model: &M,
    theta0: &ParameterVector,
    state0: &TrustRegionState,
    cfg: &SolverConfig,
    mode: TrMode,
) -> Result<IterateTrace> {
    state0.validate()?;
    if !model.in_domain(theta0) {
        return Err(Error::InvalidParameter("initial point outside model domain".into()));
    }
    let start = Instant::now();
    let mut state = *state0;
    let mut qm = build_quadratic_model(model, theta0)?;
    let grad_tol = cfg.resolve_grad_tol(qm.value);
    let mut records = Vec::new();
    let mut rejections = 0;
    let mut k = 0;

    let status = loop {
        let grad_inf = qm.gradient.amax();
        records.push(IterateRecord {
            k,
            theta: qm.center.clone(),
            log_likelihood: qm.value,
            grad_inf,
            beta: None,
            delta: None,
            step_norm: None,
            kl_step: None,
            accepted: None,
            inner_iters: 0,
            inexact: false,
            elapsed: start.elapsed().as_secs_f64(),
        });
        if grad_inf <= grad_tol {
            break RunStatus::Converged;
        }
        if k >= cfg.max_outer_iters {
            break RunStatus::MaxIterations;
        }

        let (step, beta) = match mode {
            TrMode::DeltaDriven => {
                let sol = solve_tr_subproblem(&qm, state.delta)?;
                (sol.step, sol.beta)
            }
            TrMode::BetaDriven => (qm.approximate_kpp_step(state.beta)?, state.beta),
        };
        let predicted = qm.predicted_increase(&step);
        if predicted.is_nan() || predicted <= ROUNDOFF_GAIN * (1.0 + qm.value.abs()) {
            // No increase of l is resolvable at working precision.
            break RunStatus::Stalled;
        }
        let radius = match mode {
            TrMode::DeltaDriven => state.delta,
            TrMode::BetaDriven => tr_norm(&step, &qm.penalty_hessian),
        };

        let candidate = qm.center.as_vector() + &step;
        let evaluated = if model.in_domain(&candidate) {
            let candidate = ParameterVector::new(candidate)?;
            let value = model.log_likelihood(&candidate)?;
            Some((candidate, value))
        } else {
            None
        };
        let actual = evaluated
            .as_ref()
            .map_or(f64::NEG_INFINITY, |(_, value)| value - qm.value);
        let accepted = evaluated.is_some() && tr_accept(actual, predicted, state.accept_ratio)?;

        match mode {
            TrMode::DeltaDriven => {
                state.delta = if evaluated.is_some() {
                    update_delta(&state, actual, predicted)?
                } else {
                    0.5 * state.shrink_factor * state.delta
                };
                state.beta = beta;
            }
            TrMode::BetaDriven => {
                state.beta *= if accepted {
                    state.beta_decrease
                } else {
                    state.beta_increase
                };
            }
        }

        let record = records.last_mut().expect("pushed above");
        record.beta = Some(beta);
        record.delta = Some(radius);
        record.accepted = Some(accepted);
        match evaluated {
            Some((candidate, value)) if accepted => {
                record.step_norm = Some(step.norm());
                record.kl_step = Some(model.kl_penalty(&qm.center, &candidate)?);
                qm = build_quadratic_model(model, &candidate)?;
                qm.value = value;
                rejections = 0;
            }
            _ => {
                record.step_norm = Some(0.0);
                record.kl_step = Some(0.0);
                rejections += 1;
                if rejections >= MAX_CONSECUTIVE_REJECTIONS {
                    return Err(Error::TrustRegionCollapsed {
                        rejections,
                        delta: state.delta,
                        beta: state.beta,
                    });
                }
            }
        }
        k += 1;
    };

    Ok(IterateTrace {
        records,
        status,
        grad_tol,
    })
}
