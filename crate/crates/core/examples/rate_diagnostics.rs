//! Convergence-rate classification of EM, geometric KPP and both
//! trust-region modes, each against its own extended-run limit θ*.
//!
//! `cargo run --release --example rate_diagnostics [sigma]`

use kpp::harness::{
    analyze_distances, run_solver, Algorithm, ExperimentConfig, RateThresholds, ReferenceRule, SolverSpec, DEFAULT_TAIL,
};
use kpp::proximal::SolverConfig;
use kpp::trust_region::TrMode;

fn main() -> kpp::Result<()> {
    let sigma: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8.0);
    let cfg = ExperimentConfig::from_toml(&format!(
        "[instance]\nsource = \"phantom\"\nsigma = {sigma:?}\n[[solvers]]\nalgorithm = \"em\"\n"
    ))?;
    let inst = cfg.build_instance()?;

    let mut tr_beta = SolverSpec::new(Algorithm::TrustRegion).named("tr_beta");
    tr_beta.mode = TrMode::BetaDriven;
    let mut tr_delta = SolverSpec::new(Algorithm::TrustRegion).named("tr_delta");
    tr_delta.mode = TrMode::DeltaDriven;
    let kpp = SolverSpec {
        solver: SolverConfig::geometric(1.0, 0.5),
        ..SolverSpec::new(Algorithm::Kpp)
    };

    println!("σ = {sigma}");
    for spec in [SolverSpec::new(Algorithm::Em), kpp, tr_beta, tr_delta] {
        let sr = run_solver(&spec, &inst.model, &inst.theta0, &ReferenceRule::default())?;
        let d = sr.accepted_distances();
        let floor = 1e2 * f64::EPSILON * sr.theta_star().as_vector().norm();
        match analyze_distances(&d, floor, DEFAULT_TAIL, &RateThresholds::default()) {
            Ok(rep) => println!(
                "{:>12}: {:>4} accepted, tail r̄ = {:.4}, slope {:+.4} → {}",
                spec.label(),
                d.len(),
                rep.tail_median,
                rep.tail_slope,
                rep.classification
            ),
            Err(e) => println!("{:>12}: {e}", spec.label()),
        }
    }
    Ok(())
}
