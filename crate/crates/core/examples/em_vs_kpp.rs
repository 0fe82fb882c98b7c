//! EM against geometric-schedule KPP on the 64-pixel two-rail deblur.
//!
//! `cargo run --release --example em_vs_kpp`

use kpp::poisson::{gaussian_blur_matrix, synthesize_data, two_rail_phantom, NoiseMode, PhantomSpec};
use kpp::proximal::{em_run, run, SolverConfig};
use kpp::{ParameterVector, PoissonDeblurModel};

fn main() -> kpp::Result<()> {
    let spec = PhantomSpec::default();
    let truth = two_rail_phantom(&spec, None)?;
    let system = gaussian_blur_matrix(spec.pixels, 8.0)?;
    let counts = synthesize_data(&system, &truth, NoiseMode::Noiseless)?;

    let level = counts.sum() / system.sum();
    let theta0 = ParameterVector::uniform(spec.pixels, level)?;
    let model = PoissonDeblurModel::new(system, counts, PoissonDeblurModel::default_floor(&theta0))?;

    let em = em_run(&model, &theta0, &SolverConfig::em())?;
    let kpp = run(&model, &theta0, &SolverConfig::geometric(1.0, 0.5))?;

    println!("{:>5} {:>18} {:>18}", "k", "EM l(θ_k)", "KPP l(θ_k)");
    for k in [0, 1, 2, 5, 10, 20, 50, 100, 500] {
        let cell = |t: &kpp::proximal::IterateTrace| {
            t.records
                .get(k)
                .map_or_else(|| "-".to_string(), |r| format!("{:.10}", r.log_likelihood))
        };
        println!("{k:>5} {:>18} {:>18}", cell(&em), cell(&kpp));
    }
    for (name, t) in [("EM", &em), ("KPP", &kpp)] {
        println!(
            "{name}: {:?} after {} iterations, ‖∇l‖∞ = {:.2e} (tolerance {:.2e}), worst margin violation {:.1e}",
            t.status,
            t.iterations(),
            t.last().grad_inf,
            t.grad_tol,
            t.worst_margin_violation()
        );
    }
    Ok(())
}
