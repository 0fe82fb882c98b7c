//! KPP on a user-defined model: the Gaussian case, where the likelihood and
//! the penalty are both quadratics and each KPP step is a linear solve.
//!
//! `cargo run --example quadratic_model`

use kpp::proximal::{run, SolverConfig};
use kpp::{ConcaveQuadratic, ParameterVector};
use nalgebra::{DMatrix, DVector};

fn main() -> kpp::Result<()> {
    let curvature = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 0.2]);
    let penalty = DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 2.0, 2.0]));
    let model = ConcaveQuadratic::new(DVector::from_column_slice(&[1.0, -2.0, 0.5]), curvature, penalty)?;
    let theta0 = ParameterVector::from_slice(&[0.0, 0.0, 0.0])?;
    let target = model.maximizer();

    for (name, cfg) in [
        ("β = 1", SolverConfig::em()),
        ("β_k = 0.5^k", SolverConfig::geometric(1.0, 0.5)),
    ] {
        let trace = run(
            &model,
            &theta0,
            &SolverConfig {
                grad_tol: Some(1e-8),
                ..cfg
            },
        )?;
        let dist: Vec<String> = trace
            .records
            .iter()
            .take(8)
            .map(|r| format!("{:.1e}", (r.theta.as_vector() - &target).norm()))
            .collect();
        println!(
            "{name}: {} iterations, final ‖∇l‖∞ {:.1e}; ‖θ_k − θ*‖ = {}",
            trace.iterations(),
            trace.last().grad_inf,
            dist.join(", ")
        );
    }
    Ok(())
}
