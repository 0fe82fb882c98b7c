//! Shared instance generators and independent oracles for the integration
//! tests and the acceptance suite.

#![allow(dead_code)]

use kpp::harness::{ExperimentConfig, Instance};
use kpp::trust_region::{tr_norm, QuadraticModel, SubproblemSolution};
use kpp::{ParameterVector, PoissonDeblurModel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn positive_vector(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> ParameterVector {
    ParameterVector::new(DVector::from_fn(n, |_, _| rng.random_range(lo..hi))).unwrap()
}

/// Random `m × p` system with entries in `[0, 1)`, about a third of them
/// zeroed, each column keeping at least one positive entry. Counts are
/// Poisson draws around `P θ_true`.
pub fn random_instance(rng: &mut impl Rng, p: usize, m: usize) -> (PoissonDeblurModel, ParameterVector) {
    let mut system = DMatrix::from_fn(m, p, |_, _| {
        if rng.random_bool(0.33) {
            0.0
        } else {
            rng.random_range(0.01..1.0)
        }
    });
    for i in 0..p {
        let j = rng.random_range(0..m);
        system[(j, i)] = rng.random_range(0.1..1.0);
    }
    let truth = positive_vector(rng, p, 0.5, 10.0);
    let mean = &system * truth.as_vector();
    let counts = mean.map(|rate| {
        if rate > 0.0 {
            Poisson::new(rate).unwrap().sample(rng)
        } else {
            0.0
        }
    });
    (PoissonDeblurModel::new(system, counts, 1e-10).unwrap(), truth)
}

pub fn random_dims(rng: &mut impl Rng) -> (usize, usize) {
    let p = rng.random_range(2..=16);
    let m = rng.random_range(p..=2 * p);
    (p, m)
}

/// The 64-pixel noiseless two-rail instance with every default.
pub fn default_instance() -> Instance {
    deblur_instance(8.0, 64)
}

pub fn deblur_instance(sigma: f64, pixels: usize) -> Instance {
    let r1 = pixels * 3 / 8;
    let r2 = pixels * 5 / 8;
    let text = format!(
        "[instance]\nsource = \"phantom\"\nsigma = {sigma:?}\n\
         phantom = {{ pixels = {pixels}, rails = [[{r1}], [{r2}]], rail_height = 1.0, background = 0.1 }}\n\
         [[solvers]]\nalgorithm = \"em\"\n"
    );
    ExperimentConfig::from_toml(&text).unwrap().build_instance().unwrap()
}

/// Random concave quadratic model: `−H = AᵀA + 0.1 I`, `I_k = BᵀB + 0.1 I`.
pub fn random_quadratic_model(rng: &mut impl Rng, n: usize) -> QuadraticModel {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let neg_h: DMatrix<f64> = a.transpose() * &a + 0.1 * DMatrix::identity(n, n);
    let pen: DMatrix<f64> = b.transpose() * &b + 0.1 * DMatrix::identity(n, n);
    let g = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    QuadraticModel::new(ParameterVector::uniform(n, 0.0).unwrap(), 0.0, g, -neg_h, pen).unwrap()
}

fn step_at(qm: &QuadraticModel, beta: f64) -> DVector<f64> {
    let op = -&qm.hessian + beta * &qm.penalty_hessian;
    op.lu().solve(&qm.gradient).expect("shifted operator is nonsingular")
}

/// Dual oracle: scan `β` on a log grid over `[1e-12, 1e12]` for the sign change
/// of `‖d(β)‖_I − δ`, then bisect in `log β` to machine precision.
pub fn brute_force_subproblem(qm: &QuadraticModel, delta: f64) -> SubproblemSolution {
    let norm = |beta: f64| tr_norm(&step_at(qm, beta), &qm.penalty_hessian);
    if norm(0.0) <= delta {
        return SubproblemSolution {
            step: step_at(qm, 0.0),
            beta: 0.0,
        };
    }
    let grid: Vec<f64> = (0..=480).map(|i| 10f64.powf(-12.0 + 0.05 * i as f64)).collect();
    let hi_idx = grid
        .iter()
        .position(|&b| norm(b) <= delta)
        .expect("radius reached on the grid");
    let (mut lo, mut hi) = if hi_idx == 0 {
        (0.0, grid[0])
    } else {
        (grid[hi_idx - 1], grid[hi_idx])
    };
    for _ in 0..200 {
        let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * hi };
        if mid <= lo || mid >= hi {
            break;
        }
        if norm(mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let beta = 0.5 * (lo + hi);
    SubproblemSolution {
        step: step_at(qm, beta),
        beta,
    }
}

/// `(stationarity, complementarity)` residuals, scaled as
/// `‖(−H + βI)d − g‖∞ / ‖g‖∞` and `β |δ − ‖d‖_I| / δ`.
pub fn kkt_residuals(qm: &QuadraticModel, sol: &SubproblemSolution, delta: f64) -> (f64, f64) {
    let r = (-&qm.hessian + sol.beta * &qm.penalty_hessian) * &sol.step - &qm.gradient;
    let stat = r.amax() / qm.gradient.amax().max(f64::MIN_POSITIVE);
    let comp = sol.beta * (delta - tr_norm(&sol.step, &qm.penalty_hessian)).abs() / delta;
    (stat, comp)
}

/// One Newton step on `l` from `θ`: `θ − H⁻¹ ∇l`.
pub fn newton_step(model: &impl kpp::ProblemModel, theta: &ParameterVector) -> DVector<f64> {
    let g = model.grad_log_likelihood(theta).unwrap();
    let h = model.hess_log_likelihood(theta).unwrap();
    theta.as_vector() - h.lu().solve(&g).unwrap()
}
