//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Exits nonzero on failure only when `KPP_ACCEPTANCE_STRICT=1`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use kpp::diagnostics::{check_all, DEFAULT_STEP};
use kpp::harness::{
    cmd_compare, cmd_rate, cmd_run, Algorithm, ExperimentConfig, RateClass, RateThresholds, SolverSpec, TraceFile,
    DEFAULT_TAIL,
};
use kpp::model::ProblemModel;
use kpp::proximal::{kpp_step, run, IterateTrace, SolverConfig};
use kpp::trust_region::{run_tr, solve_tr_subproblem, TrMode, TrustRegionState};
use kpp::{ParameterVector, PoissonDeblurModel};
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Verdict) -> Verdict {
    let start = Instant::now();
    let v = f();
    let elapsed = start.elapsed();
    match limit {
        Some(limit) if elapsed > limit => verdict(
            false,
            format!(
                "{}; took {:.2} s, limit {} s",
                v.detail,
                elapsed.as_secs_f64(),
                limit.as_secs()
            ),
        ),
        _ => verdict(v.pass, format!("{}; {:.2} s", v.detail, elapsed.as_secs_f64())),
    }
}

fn bundled_config(out: &Path) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/deblur64.toml");
    let mut cfg = ExperimentConfig::load(&path).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn em_matches_unit_beta_step() -> Verdict {
    let mut rng = common::rng(101);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (p, m) = common::random_dims(&mut rng);
        let (model, _) = common::random_instance(&mut rng, p, m);
        let bar = common::positive_vector(&mut rng, p, 0.5, 5.0);
        let em = model.closed_form_em_update(&bar).unwrap().unwrap();
        let step = kpp_step(&model, &bar, 1.0, &SolverConfig::default()).unwrap();
        for i in 0..p {
            worst = worst.max((step.theta[i] - em[i]).abs() / em[i].abs());
        }
    }
    verdict(
        worst <= 1e-6,
        format!("100 instances, worst relative coordinate error {worst:.2e}"),
    )
}

fn margin_violations(model: &dyn ProblemModel, trace: &IterateTrace) -> (usize, usize, f64) {
    let mut steps = 0;
    let mut bad = 0;
    let mut worst = 0.0f64;
    let accepted: Vec<_> = trace.records.iter().filter(|r| r.accepted != Some(false)).collect();
    for w in accepted.windows(2) {
        let (a, b) = (w[0], w[1]);
        let beta = a.beta.unwrap_or(0.0);
        let gain = model.log_likelihood(&b.theta).unwrap() - model.log_likelihood(&a.theta).unwrap();
        let penalty = beta * model.kl_penalty(&a.theta, &b.theta).unwrap();
        let shortfall = penalty - gain;
        steps += 1;
        worst = worst.max(shortfall);
        if gain < penalty - 1e-9 {
            bad += 1;
        }
    }
    (steps, bad, worst)
}

type Solve = Box<dyn Fn(&PoissonDeblurModel, &ParameterVector) -> IterateTrace>;

fn solver_matrix() -> Vec<(&'static str, Solve)> {
    let cfg = SolverConfig {
        max_outer_iters: 200,
        ..SolverConfig::default()
    };
    let (a, b, c, d, e) = (cfg.clone(), cfg.clone(), cfg.clone(), cfg.clone(), cfg);
    vec![
        ("em", Box::new(move |m, t| run(m, t, &a).unwrap())),
        (
            "kpp geometric",
            Box::new(move |m, t| {
                run(
                    m,
                    t,
                    &SolverConfig {
                        schedule: SolverConfig::geometric(1.0, 0.5).schedule,
                        ..b.clone()
                    },
                )
                .unwrap()
            }),
        ),
        (
            "kpp constant 0.3",
            Box::new(move |m, t| {
                run(
                    m,
                    t,
                    &SolverConfig {
                        schedule: kpp::RelaxationSchedule::Constant { beta0: 0.3 },
                        ..c.clone()
                    },
                )
                .unwrap()
            }),
        ),
        (
            "tr beta",
            Box::new(move |m, t| run_tr(m, t, &TrustRegionState::default(), &d, TrMode::BetaDriven).unwrap()),
        ),
        (
            "tr delta",
            Box::new(move |m, t| run_tr(m, t, &TrustRegionState::default(), &e, TrMode::DeltaDriven).unwrap()),
        ),
    ]
}

fn monotone_with_margin() -> Verdict {
    let mut instances: Vec<(PoissonDeblurModel, ParameterVector)> = Vec::new();
    let default = common::default_instance();
    instances.push((default.model, default.theta0));
    let small = common::deblur_instance(2.0, 16);
    instances.push((small.model, small.theta0));
    let mut rng = common::rng(202);
    for _ in 0..20 {
        let (p, m) = common::random_dims(&mut rng);
        let (model, _) = common::random_instance(&mut rng, p, m);
        let start = common::positive_vector(&mut rng, p, 0.5, 5.0);
        instances.push((model, start));
    }
    let mut total_bad = 0;
    let mut parts = Vec::new();
    for (name, solve) in solver_matrix() {
        let (mut steps, mut bad, mut worst) = (0, 0, f64::NEG_INFINITY);
        for (model, start) in &instances {
            let trace = solve(model, start);
            let (s, b, w) = margin_violations(model, &trace);
            steps += s;
            bad += b;
            worst = worst.max(w);
        }
        total_bad += bad;
        parts.push(format!("{name}: {bad}/{steps} violations, worst shortfall {worst:.2e}"));
    }
    verdict(
        total_bad == 0,
        format!("{} instances; {}", instances.len(), parts.join("; ")),
    )
}

fn kl_identities() -> Verdict {
    let mut rng = common::rng(303);
    let (mut neg, mut diag, mut grad, mut split) = (0usize, 0.0f64, 0.0f64, 0.0f64);
    let mut min_kl = f64::INFINITY;
    for _ in 0..50 {
        let (p, m) = common::random_dims(&mut rng);
        let (model, _) = common::random_instance(&mut rng, p, m);
        for _ in 0..20 {
            let bar = common::positive_vector(&mut rng, p, 0.05, 20.0);
            let theta = common::positive_vector(&mut rng, p, 0.05, 20.0);
            let kl = model.kl_penalty(&bar, &theta).unwrap();
            min_kl = min_kl.min(kl);
            if kl < 0.0 {
                neg += 1;
            }
            diag = diag.max(model.kl_penalty(&bar, &bar).unwrap().abs());
            grad = grad.max(model.grad_kl_penalty(&bar, &bar).unwrap().amax());
            let rhs = model.log_likelihood(&theta).unwrap()
                - model.log_likelihood(&bar).unwrap()
                - model.q_function(&theta, &bar).unwrap()
                + model.q_function(&bar, &bar).unwrap();
            split = split.max((kl - rhs).abs());
        }
    }
    verdict(
        neg == 0 && diag <= 1e-12 && grad <= 1e-10 && split <= 1e-9,
        format!(
            "1000 pairs, min I {min_kl:.2e}, |I(t,t)| {diag:.2e}, |grad I(t,t)| {grad:.2e}, decomposition error {split:.2e}"
        ),
    )
}

fn derivatives() -> Verdict {
    let mut rng = common::rng(404);
    let mut worst = [0.0f64; 4];
    for _ in 0..50 {
        let (p, m) = common::random_dims(&mut rng);
        let (model, _) = common::random_instance(&mut rng, p, m);
        let bar = common::positive_vector(&mut rng, p, 0.2, 8.0);
        let theta = common::positive_vector(&mut rng, p, 0.2, 8.0);
        for (w, e) in worst
            .iter_mut()
            .zip(check_all(&model, &bar, &theta, DEFAULT_STEP).unwrap())
        {
            *w = w.max(e);
        }
    }
    verdict(
        worst.iter().all(|&e| e <= 1e-5),
        format!(
            "50 points, worst error grad l {:.1e}, hess l {:.1e}, grad I {:.1e}, hess I {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn subproblem_oracle() -> Verdict {
    let mut rng = common::rng(505);
    let (mut step_err, mut stat, mut comp) = (0.0f64, 0.0f64, 0.0f64);
    let mut boundary = 0;
    for _ in 0..200 {
        let n = rng.random_range(2..=6);
        let qm = common::random_quadratic_model(&mut rng, n);
        let delta = 10f64.powf(rng.random_range(-2.0..0.5));
        let ours = solve_tr_subproblem(&qm, delta).unwrap();
        let oracle = common::brute_force_subproblem(&qm, delta);
        if ours.beta > 0.0 {
            boundary += 1;
        }
        step_err = step_err.max((&ours.step - &oracle.step).amax());
        let (s, c) = common::kkt_residuals(&qm, &ours, delta);
        stat = stat.max(s);
        comp = comp.max(c);
    }
    verdict(
        step_err <= 1e-6 && stat <= 1e-8 && comp <= 1e-8,
        format!("200 instances ({boundary} on the boundary), step error {step_err:.2e}, KKT {stat:.2e} / {comp:.2e}"),
    )
}

struct DefaultRun {
    dir: tempfile::TempDir,
    cfg: ExperimentConfig,
}

impl DefaultRun {
    fn trace(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(format!("{name}.csv"))
    }
}

fn default_run() -> DefaultRun {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bundled_config(&dir.path().join("run"));
    let outcome = cmd_run(&cfg).unwrap();
    assert!(outcome.all_succeeded());
    DefaultRun { dir, cfg }
}

fn rate_signature(run: &DefaultRun) -> Verdict {
    let thr = RateThresholds::default();
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, want) in [
        ("em", RateClass::Linear),
        ("kpp", RateClass::Superlinear),
        ("tr_beta", RateClass::Superlinear),
    ] {
        match cmd_rate(&run.trace(name), DEFAULT_TAIL, &thr) {
            Ok(r) => {
                pass &= r.classification == want;
                parts.push(format!(
                    "{name} {} (tail median {:.4}, slope {:+.4})",
                    r.classification, r.tail_median, r.tail_slope
                ));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{name} error: {e}"));
            }
        }
    }
    verdict(pass, parts.join(", "))
}

fn crossover(run: &DefaultRun) -> Verdict {
    let cmp = cmd_compare(&[run.trace("em"), run.trace("tr_beta"), run.trace("tr_delta")]).unwrap();
    let pass = cmp.crossovers.iter().all(|c| c.iteration.is_some_and(|k| k <= 50));
    let parts: Vec<String> = cmp
        .crossovers
        .iter()
        .map(|c| {
            format!(
                "{} at {}",
                c.solver,
                c.iteration.map_or("none".into(), |k| k.to_string())
            )
        })
        .collect();
    verdict(pass, format!("crossover against em: {}", parts.join(", ")))
}

fn fixed_point() -> Verdict {
    let mut worst_iters = 0;
    let mut worst_ratio = 0.0f64;
    let mut runs = 0;
    for inst in [
        common::default_instance(),
        common::deblur_instance(2.0, 16),
        common::deblur_instance(4.0, 32),
    ] {
        let truth = inst.theta_true.clone().unwrap();
        for algorithm in [Algorithm::Em, Algorithm::Kpp, Algorithm::TrustRegion] {
            for mode in [TrMode::BetaDriven, TrMode::DeltaDriven] {
                if algorithm != Algorithm::TrustRegion && mode == TrMode::DeltaDriven {
                    continue;
                }
                let mut spec = SolverSpec::new(algorithm);
                spec.mode = mode;
                if algorithm == Algorithm::Kpp {
                    spec.solver = SolverConfig::geometric(1.0, 0.5);
                }
                let trace = match algorithm {
                    Algorithm::TrustRegion => {
                        run_tr(&inst.model, &truth, &spec.trust_region, &spec.solver, mode).unwrap()
                    }
                    _ => run(&inst.model, &truth, &spec.solver).unwrap(),
                };
                runs += 1;
                worst_iters = worst_iters.max(trace.iterations());
                worst_ratio = worst_ratio.max(trace.last().grad_inf / trace.grad_tol);
            }
        }
    }
    verdict(
        worst_iters <= 2 && worst_ratio <= 10.0,
        format!(
            "{runs} runs from the truth, at most {worst_iters} iterations, final gradient {worst_ratio:.2e} x grad_tol"
        ),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut compared = 0;
    let mut differing = Vec::new();
    for noisy in [false, true] {
        let mut cfgs = Vec::new();
        for copy in ["a", "b"] {
            let mut cfg = bundled_config(&dir.path().join(format!("{copy}{noisy}")));
            if noisy {
                if let kpp::harness::InstanceSpec::Phantom { noise, .. } = &mut cfg.instance {
                    *noise = kpp::poisson::NoiseMode::Poisson { seed: 0 };
                }
                cfg.override_seed(2024);
            }
            cmd_run(&cfg).unwrap();
            cfgs.push(cfg);
        }
        for spec in &cfgs[0].solvers {
            let file = format!("{}.csv", spec.label());
            let a = TraceFile::read(&cfgs[0].output_dir.join(&file)).unwrap();
            let b = TraceFile::read(&cfgs[1].output_dir.join(&file)).unwrap();
            compared += 1;
            if a.timeless_rows() != b.timeless_rows() {
                differing.push(file);
            }
        }
    }
    verdict(
        differing.is_empty(),
        format!(
            "{compared} trace pairs compared, differing: {}",
            if differing.is_empty() {
                "none".into()
            } else {
                differing.join(" ")
            }
        ),
    )
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        verdict(false, format!("panicked: {msg}"))
    })
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut verdicts: Vec<(&str, Verdict)> = vec![
        ("AC1", guarded(|| timed(Some(secs(30)), em_matches_unit_beta_step))),
        ("AC2", guarded(|| timed(None, monotone_with_margin))),
        ("AC3", guarded(|| timed(None, kl_identities))),
        ("AC4", guarded(|| timed(None, derivatives))),
        ("AC5", guarded(|| timed(Some(secs(10)), subproblem_oracle))),
    ];

    let start = Instant::now();
    let run = catch_unwind(default_run);
    let run_time = start.elapsed();
    match &run {
        Ok(run) => {
            verdicts.push((
                "AC6",
                guarded(|| {
                    let v = rate_signature(run);
                    let within = run_time <= secs(120);
                    verdict(
                        v.pass && within,
                        format!("{}; run {:.2} s, limit 120 s", v.detail, run_time.as_secs_f64()),
                    )
                }),
            ));
            verdicts.push(("AC7", guarded(|| timed(None, || crossover(run)))));
        }
        Err(_) => {
            verdicts.push(("AC6", verdict(false, "default run failed".into())));
            verdicts.push(("AC7", verdict(false, "default run failed".into())));
        }
    }
    verdicts.push(("AC8", guarded(|| timed(None, fixed_point))));
    verdicts.push(("AC9", guarded(|| timed(None, determinism))));
    if let Ok(run) = run {
        drop(run.dir);
    }

    let passed = verdicts.iter().filter(|(_, v)| v.pass).count();
    for (name, v) in &verdicts {
        println!("{name} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("acceptance: {passed}/{} passed", verdicts.len());
    let strict = std::env::var("KPP_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < verdicts.len() {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
