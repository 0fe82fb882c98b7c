//! Finite-difference checks of ∇l, ∇²l, ∇I and ∇²I for the Poisson model.
//!
//! `cargo run --example derivative_check`

use kpp::diagnostics::{check_all, DEFAULT_STEP};
use kpp::poisson::gaussian_blur_matrix;
use kpp::{ParameterVector, PoissonDeblurModel};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> kpp::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = 8;
    let system = gaussian_blur_matrix(p, 1.5)?;
    let counts = DVector::from_fn(p, |_, _| rng.random_range(0.0..5.0));
    let model = PoissonDeblurModel::new(system, counts, 1e-8)?;

    let names = ["∇l", "∇²l", "∇I", "∇²I"];
    for trial in 0..5 {
        let theta = ParameterVector::new(DVector::from_fn(p, |_, _| rng.random_range(0.2..3.0)))?;
        let bar = ParameterVector::new(DVector::from_fn(p, |_, _| rng.random_range(0.2..3.0)))?;
        let errs = check_all(&model, &bar, &theta, DEFAULT_STEP)?;
        let line: Vec<String> = names.iter().zip(errs).map(|(n, e)| format!("{n} {e:.1e}")).collect();
        println!("point {trial}: {}", line.join("  "));
    }
    Ok(())
}
