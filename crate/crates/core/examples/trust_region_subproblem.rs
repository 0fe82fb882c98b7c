//! The trust-region subproblem at one iterate: as the radius shrinks the
//! multiplier β grows, and each solution equals the approximate KPP step
//! with that β.
//!
//! `cargo run --example trust_region_subproblem`

use kpp::poisson::{gaussian_blur_matrix, synthesize_data, two_rail_phantom, NoiseMode, PhantomSpec};
use kpp::trust_region::{build_quadratic_model, solve_tr_subproblem, tr_norm};
use kpp::{ParameterVector, PoissonDeblurModel};

fn main() -> kpp::Result<()> {
    let spec = PhantomSpec {
        pixels: 12,
        rails: [vec![3], vec![8]],
        ..PhantomSpec::default()
    };
    let truth = two_rail_phantom(&spec, None)?;
    let system = gaussian_blur_matrix(spec.pixels, 1.0)?;
    let counts = synthesize_data(&system, &truth, NoiseMode::Noiseless)?;
    let theta = ParameterVector::uniform(spec.pixels, counts.sum() / system.sum())?;
    let model = PoissonDeblurModel::new(system, counts, 1e-10)?;

    let qm = build_quadratic_model(&model, &theta)?;
    println!(
        "{:>10} {:>12} {:>12} {:>14} {:>12}",
        "δ", "β", "‖d‖_I", "predicted Δl", "vs aKPP"
    );
    for delta in [10.0, 1.0, 0.3, 0.1, 0.03, 0.01] {
        let sol = solve_tr_subproblem(&qm, delta)?;
        let gap = if sol.beta > 0.0 {
            (qm.approximate_kpp_step(sol.beta)? - &sol.step).amax()
        } else {
            0.0
        };
        println!(
            "{delta:>10.3} {:>12.4e} {:>12.4e} {:>14.6e} {gap:>12.1e}",
            sol.beta,
            tr_norm(&sol.step, &qm.penalty_hessian),
            qm.predicted_increase(&sol.step),
        );
    }
    Ok(())
}
