//! The KL penalty between complete-data posteriors: nonnegative, zero with a
//! vanishing gradient at θ̄, and equal to `l(θ) − l(θ̄) − Q(θ,θ̄) + Q(θ̄,θ̄)`.
//!
//! `cargo run --example kl_identities`

use kpp::model::decomposition_residual;
use kpp::{ParameterVector, PoissonDeblurModel, ProblemModel};
use nalgebra::{DMatrix, DVector};

fn main() -> kpp::Result<()> {
    let system = DMatrix::from_row_slice(3, 2, &[0.7, 0.1, 0.2, 0.6, 0.1, 0.3]);
    let counts = DVector::from_column_slice(&[4.0, 2.0, 1.0]);
    let model = PoissonDeblurModel::new(system, counts, 1e-10)?;
    let bar = ParameterVector::from_slice(&[1.0, 2.0])?;

    println!("I(θ̄, θ̄) = {:e}", model.kl_penalty(&bar, &bar)?);
    println!("∇I(θ̄, θ̄) = {:?}", model.grad_kl_penalty(&bar, &bar)?.as_slice());
    for theta in [[1.5, 2.0], [0.5, 0.5], [3.0, 6.0], [4.0, 0.1]] {
        let theta = ParameterVector::from_slice(&theta)?;
        println!(
            "θ = {:?}: I = {:.6}, identity residual = {:.1e}",
            theta.as_slice(),
            model.kl_penalty(&bar, &theta)?,
            decomposition_residual(&model, &theta, &bar)?
        );
    }
    // [3, 6] is a rescaling of θ̄, along which the posteriors do not change.
    Ok(())
}
