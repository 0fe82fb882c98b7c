//! A full experiment from a config file: run all solvers, then rate, compare
//! and extract snapshots from the written traces, as the `kpp` binary does.
//!
//! `cargo run --release --example experiment [config.toml]`

use std::path::PathBuf;

use kpp::harness::{
    cmd_compare, cmd_rate, cmd_run, cmd_snapshot, selected_path, ExperimentConfig, IterationRef, RateThresholds,
    DEFAULT_TAIL,
};

fn main() -> kpp::Result<()> {
    let path = std::env::args()
        .nth(1)
        .filter(|a| a.ends_with(".toml"))
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/deblur64.toml")));
    let mut cfg = ExperimentConfig::load(&path)?;
    cfg.output_dir = std::env::temp_dir().join(format!("kpp-experiment-{}", std::process::id()));

    let outcome = cmd_run(&cfg)?;
    let mut traces = Vec::new();
    for (name, result) in &outcome.solvers {
        match result {
            Ok(s) => {
                let rate = cmd_rate(&s.trace_path, DEFAULT_TAIL, &RateThresholds::default())
                    .map(|r| format!("{} (r̄ = {:.3})", r.classification, r.tail_median))
                    .unwrap_or_else(|e| e.to_string());
                println!("{name}: {:?}, {} iterations, rate {rate}", s.status, s.iterations);
                traces.push(s.trace_path.clone());
            }
            Err(e) => println!("{name}: failed: {e}"),
        }
    }
    print!("{}", cmd_compare(&traces)?.render_report());
    let snap = cmd_snapshot(
        &traces[0],
        &[IterationRef::At(0), IterationRef::Final],
        &selected_path(&traces[0], None),
    )?;
    println!("snapshots in {}", snap.display());
    std::fs::remove_dir_all(&outcome.output_dir)?;
    Ok(())
}
