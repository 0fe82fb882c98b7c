//! Experiment harness: builds instances from a config, runs solvers, writes
//! trace files and analyzes them.
//!
//! Output layout of [`cmd_run`] in the configured directory:
//!
//! - `instance.json`: the instance actually solved
//! - `<solver>.csv`: the trace, see [`trace`]
//! - `<solver>.snapshots.csv`: stored iterates `θ_k`
//! - `summary.csv`: one line per solver

pub mod compare;
pub mod config;
pub mod rate;
pub mod trace;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ProblemModel;
use crate::poisson::PoissonDeblurModel;
use crate::proximal::{run, IterateTrace, RunStatus, SolverConfig};
use crate::trust_region::{run_tr, TrMode};
use crate::ParameterVector;

pub use compare::{compare, Comparison, Crossover};
pub use config::{
    Algorithm, ExperimentConfig, Instance, InstanceFile, InstanceSpec, ReferenceRule, SolverSpec, Theta0Rule,
};
pub use rate::{analyze_distances, analyze_trace, RateClass, RateReport, RateThresholds, DEFAULT_TAIL};
pub use trace::{snapshots_path, SnapshotFile, TraceFile, ARTIFACT_VERSION};

/// A solver run together with its extended reference run.
#[derive(Debug, Clone)]
pub struct SolverRun {
    pub trace: IterateTrace,
    pub reference: IterateTrace,
}

impl SolverRun {
    pub fn theta_star(&self) -> &ParameterVector {
        self.reference.final_theta()
    }

    /// `‖θ − θ*‖₂` for each distinct iterate.
    pub fn accepted_distances(&self) -> Vec<f64> {
        let star = self.theta_star().as_vector();
        self.trace
            .accepted_iterates()
            .iter()
            .map(|r| (r.theta.as_vector() - star).norm())
            .collect()
    }
}

fn solve<M: ProblemModel + ?Sized>(
    spec: &SolverSpec,
    model: &M,
    theta0: &ParameterVector,
    cfg: &SolverConfig,
) -> Result<IterateTrace> {
    match spec.algorithm {
        Algorithm::Em | Algorithm::Kpp => run(model, theta0, cfg),
        Algorithm::TrustRegion => run_tr(model, theta0, &spec.trust_region, cfg, spec.mode),
    }
}

/// Runs one solver and its reference: the same solver with `multiplier ×`
/// the iteration limit and the resolved gradient tolerance divided by
/// `tol_divisor`.
pub fn run_solver<M: ProblemModel + ?Sized>(
    spec: &SolverSpec,
    model: &M,
    theta0: &ParameterVector,
    reference: &ReferenceRule,
) -> Result<SolverRun> {
    spec.validate()?;
    let trace = solve(spec, model, theta0, &spec.solver)?;
    let extended = SolverConfig {
        max_outer_iters: spec.solver.max_outer_iters * reference.multiplier,
        grad_tol: Some(trace.grad_tol / reference.tol_divisor),
        ..spec.solver.clone()
    };
    let reference = solve(spec, model, theta0, &extended)?;
    Ok(SolverRun { trace, reference })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSummary {
    pub name: String,
    pub algorithm: Algorithm,
    pub trace_path: PathBuf,
    pub status: RunStatus,
    /// Outer iterations, rejected trust-region steps included.
    pub iterations: usize,
    pub iterations_to_tolerance: Option<usize>,
    pub final_log_likelihood: f64,
    pub final_grad_inf: f64,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    /// Per solver, in config order; failures keep their error.
    pub solvers: Vec<(String, Result<SolverSummary>)>,
}

impl RunOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.solvers.iter().all(|(_, r)| r.is_ok())
    }

    pub fn summary(&self, name: &str) -> Option<&SolverSummary> {
        self.solvers
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, r)| r.as_ref().ok())
    }
}

fn status_str(status: RunStatus) -> &'static str {
    match status {
        RunStatus::Converged => "converged",
        RunStatus::MaxIterations => "max_iterations",
        RunStatus::Stalled => "stalled",
    }
}

fn header_for(
    spec: &SolverSpec,
    model: &PoissonDeblurModel,
    cfg: &ExperimentConfig,
    sr: &SolverRun,
) -> Result<Vec<(String, String)>> {
    let mut h = vec![
        ("solver".to_string(), spec.label().to_string()),
        ("algorithm".to_string(), spec.algorithm.as_str().to_string()),
        ("config".to_string(), serde_json::to_string(spec)?),
        ("instance".to_string(), serde_json::to_string(&cfg.instance)?),
        ("instance_hash".to_string(), model.fingerprint()),
        ("version".to_string(), ARTIFACT_VERSION.to_string()),
        ("status".to_string(), status_str(sr.trace.status).to_string()),
        ("grad_tol".to_string(), format!("{:e}", sr.trace.grad_tol)),
        ("reference_rule".to_string(), serde_json::to_string(&cfg.reference)?),
        (
            "reference_iterations".to_string(),
            sr.reference.iterations().to_string(),
        ),
        (
            "reference_status".to_string(),
            status_str(sr.reference.status).to_string(),
        ),
        (
            "reference_norm".to_string(),
            format!("{:e}", sr.theta_star().as_vector().norm()),
        ),
    ];
    if spec.algorithm == Algorithm::TrustRegion {
        let mode = match spec.mode {
            TrMode::DeltaDriven => "delta_driven",
            TrMode::BetaDriven => "beta_driven",
        };
        h.insert(2, ("mode".to_string(), mode.to_string()));
    }
    Ok(h)
}

fn run_one(spec: &SolverSpec, instance: &Instance, cfg: &ExperimentConfig, dir: &Path) -> Result<SolverSummary> {
    let sr = run_solver(spec, &instance.model, &instance.theta0, &cfg.reference)?;
    let header = header_for(spec, &instance.model, cfg, &sr)?;
    let trace_path = dir.join(format!("{}.csv", spec.label()));
    let file = TraceFile::from_trace(&sr.trace, sr.theta_star(), header.clone());
    file.write(&trace_path)?;
    TraceFile::read(&trace_path)?.validate_monotone()?;

    let mut snap_header: Vec<(String, String)> = header
        .into_iter()
        .filter(|(k, _)| matches!(k.as_str(), "solver" | "algorithm" | "instance_hash" | "version"))
        .collect();
    snap_header.push((
        "reference".to_string(),
        sr.theta_star()
            .iter()
            .map(|v| format!("{v:e}"))
            .collect::<Vec<_>>()
            .join(" "),
    ));
    let stride = cfg.snapshot_stride(instance.theta0.len());
    SnapshotFile::from_trace(&sr.trace, stride, snap_header).write(&snapshots_path(&trace_path))?;

    let last = sr.trace.last();
    Ok(SolverSummary {
        name: spec.label().to_string(),
        algorithm: spec.algorithm,
        trace_path,
        status: sr.trace.status,
        iterations: sr.trace.iterations(),
        iterations_to_tolerance: sr.trace.iterations_to_tolerance(),
        final_log_likelihood: last.log_likelihood,
        final_grad_inf: last.grad_inf,
    })
}

fn render_summary(outcome: &RunOutcome) -> String {
    let mut out = String::from(
        "solver,algorithm,status,iterations,iterations_to_tolerance,final_log_likelihood,final_grad_inf,error\n",
    );
    for (name, result) in &outcome.solvers {
        match result {
            Ok(s) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{:e},{:e},",
                    s.name,
                    s.algorithm.as_str(),
                    status_str(s.status),
                    s.iterations,
                    s.iterations_to_tolerance.map(|k| k.to_string()).unwrap_or_default(),
                    s.final_log_likelihood,
                    s.final_grad_inf
                );
            }
            Err(e) => {
                let msg = e.to_string().replace([',', '\n'], ";");
                let _ = writeln!(out, "{name},,failed,,,,,{msg}");
            }
        }
    }
    out
}

/// Runs every configured solver (concurrently) and writes traces, snapshots,
/// the instance and a summary into the output directory.
///
/// Config and instance errors abort; solver errors are recorded per solver.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let instance = cfg.build_instance()?;
    let dir = cfg.output_dir.clone();
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", dir.display())))?;
    std::fs::write(dir.join("instance.json"), serde_json::to_string(&instance.to_file())?)?;

    let results: Vec<Result<SolverSummary>> = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .solvers
            .iter()
            .map(|spec| s.spawn(|| run_one(spec, &instance, cfg, &dir)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Config("solver thread panicked".into())))
            })
            .collect()
    });
    let outcome = RunOutcome {
        output_dir: dir.clone(),
        solvers: cfg.solvers.iter().map(|s| s.label().to_string()).zip(results).collect(),
    };
    std::fs::write(dir.join("summary.csv"), render_summary(&outcome))?;
    Ok(outcome)
}

pub fn cmd_rate(trace_path: &Path, tail: f64, thresholds: &RateThresholds) -> Result<RateReport> {
    analyze_trace(&TraceFile::read(trace_path)?, tail, thresholds)
}

pub fn cmd_compare(trace_paths: &[PathBuf]) -> Result<Comparison> {
    let traces = trace_paths
        .iter()
        .map(|p| TraceFile::read(p))
        .collect::<Result<Vec<_>>>()?;
    compare(&traces)
}

/// An entry of a snapshot request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterationRef {
    At(usize),
    Final,
}

impl FromStr for IterationRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "final" => Ok(IterationRef::Final),
            t => t
                .parse()
                .map(IterationRef::At)
                .map_err(|_| Error::Config(format!("bad iteration '{t}', expected a number or 'final'"))),
        }
    }
}

/// Parses `"0,10,final"`; an empty string is an empty list.
pub fn parse_iterations(list: &str) -> Result<Vec<IterationRef>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Writes the requested iterates of a run as a matrix (one row per
/// iteration, one column per pixel) to `out`.
pub fn cmd_snapshot(trace_path: &Path, iterations: &[IterationRef], out: &Path) -> Result<PathBuf> {
    let trace = TraceFile::read(trace_path)?;
    let snaps = SnapshotFile::read(&snapshots_path(trace_path))?;
    let last = trace
        .rows
        .last()
        .map(|r| r.k)
        .ok_or_else(|| Error::MalformedTrace("trace has no rows".into()))?;
    let pixels = snaps.snapshots.values().next().map_or(0, Vec::len);
    let mut text = String::new();
    for (k, v) in &snaps.header {
        if k != "reference" {
            let _ = writeln!(text, "# {k}: {v}");
        }
    }
    text.push_str(&trace::matrix_columns(pixels));
    text.push('\n');
    for it in iterations {
        let k = match *it {
            IterationRef::At(k) => k,
            IterationRef::Final => last,
        };
        let values = snaps.snapshots.get(&k).ok_or_else(|| Error::SnapshotMissing {
            requested: k.to_string(),
            available: snaps.cadence(),
        })?;
        text.push_str(&trace::matrix_row(&k.to_string(), values));
        text.push('\n');
    }
    std::fs::write(out, text)?;
    Ok(out.to_path_buf())
}

/// Default output path of [`cmd_snapshot`]: `<dir>/<stem>.selected.csv`.
pub fn selected_path(trace_path: &Path, dir: Option<&Path>) -> PathBuf {
    let stem = trace_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let dir = dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| trace_path.parent().unwrap_or(Path::new(".")).to_path_buf());
    dir.join(format!("{stem}.selected.csv"))
}
