mod common;

use std::path::{Path, PathBuf};
use std::process::Command;

use kpp::harness::{
    cmd_compare, cmd_rate, cmd_run, cmd_snapshot, parse_iterations, selected_path, snapshots_path, ExperimentConfig,
    RateClass, RateThresholds, SnapshotFile, TraceFile, DEFAULT_TAIL,
};
use kpp::Error;

const CONFIG: &str = r#"
[instance]
source = "phantom"
sigma = 2.0
phantom = { pixels = 16, rails = [[5], [10]], rail_height = 1.0, background = 0.1 }

[[solvers]]
name = "em"
algorithm = "em"
solver = { max_outer_iters = 300 }

[[solvers]]
name = "kpp"
algorithm = "kpp"
solver = { schedule = { kind = "geometric", beta0 = 1.0, ratio = 0.5 } }

[[solvers]]
name = "tr"
algorithm = "trust_region"
mode = "beta_driven"
"#;

fn config_in(dir: &Path, text: &str) -> ExperimentConfig {
    let path = dir.join("experiment.toml");
    std::fs::write(&path, format!("output_dir = \"out\"\n{text}")).unwrap();
    ExperimentConfig::load(&path).unwrap()
}

fn trace_path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(format!("{name}.csv"))
}

#[test]
fn run_writes_traces_snapshots_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), CONFIG);
    let outcome = cmd_run(&cfg).unwrap();
    assert!(outcome.all_succeeded());
    assert_eq!(outcome.output_dir, dir.path().join("out"));
    for name in ["em", "kpp", "tr"] {
        let trace = TraceFile::read(&trace_path(&cfg, name)).unwrap();
        trace.validate_monotone().unwrap();
        assert_eq!(trace.header_value("solver"), Some(name));
        assert!(trace.header_value("instance_hash").is_some());
        assert!(snapshots_path(&trace_path(&cfg, name)).exists());
    }
    assert!(dir.path().join("out/instance.json").exists());
    let summary = std::fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
}

#[test]
fn repeated_runs_agree_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let text = CONFIG.replace(
        "source = \"phantom\"",
        "source = \"phantom\"\nnoise = { mode = \"poisson\", seed = 17 }",
    );
    let mut first = config_in(dir.path(), &text);
    first.output_dir = dir.path().join("a");
    let mut second = first.clone();
    second.output_dir = dir.path().join("b");
    cmd_run(&first).unwrap();
    cmd_run(&second).unwrap();
    for name in ["em", "kpp", "tr"] {
        let a = TraceFile::read(&trace_path(&first, name)).unwrap();
        let b = TraceFile::read(&trace_path(&second, name)).unwrap();
        assert_eq!(a.timeless_rows(), b.timeless_rows(), "{name}");
    }

    let mut reseeded = first.clone();
    reseeded.output_dir = dir.path().join("c");
    reseeded.override_seed(18);
    cmd_run(&reseeded).unwrap();
    let a = TraceFile::read(&trace_path(&first, "em")).unwrap();
    let c = TraceFile::read(&trace_path(&reseeded, "em")).unwrap();
    assert_ne!(a.header_value("instance_hash"), c.header_value("instance_hash"));
}

#[test]
fn snapshots_cover_the_start_and_the_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), CONFIG);
    cmd_run(&cfg).unwrap();
    let inst = cfg.build_instance().unwrap();
    let kpp = trace_path(&cfg, "kpp");

    let out = cmd_snapshot(&kpp, &parse_iterations("0,final").unwrap(), &selected_path(&kpp, None)).unwrap();
    assert_eq!(out, cfg.output_dir.join("kpp.selected.csv"));
    let text = std::fs::read_to_string(&out).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with('k'))
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0], inst.theta0.to_vec());
    let truth = inst.theta_true.unwrap();
    let dist = |row: &[f64]| {
        row.iter()
            .zip(truth.to_vec())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    assert!(dist(&rows[1]) < 0.5 * dist(&rows[0]));

    let snaps = SnapshotFile::read(&snapshots_path(&kpp)).unwrap();
    assert_eq!(snaps.stride, 1);
}

#[test]
fn empty_snapshot_request_writes_only_headers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), CONFIG);
    cmd_run(&cfg).unwrap();
    let out = dir.path().join("empty.csv");
    cmd_snapshot(&trace_path(&cfg, "em"), &[], &out).unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data.len(), 1);
    assert!(data[0].starts_with("k,p0,"));
}

#[test]
fn missing_snapshot_reports_the_cadence() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("snapshot_every = 5\n{CONFIG}");
    let cfg = config_in(dir.path(), &text);
    cmd_run(&cfg).unwrap();
    let err = cmd_snapshot(
        &trace_path(&cfg, "em"),
        &parse_iterations("3").unwrap(),
        &dir.path().join("x.csv"),
    )
    .unwrap_err();
    match err {
        Error::SnapshotMissing { requested, available } => {
            assert_eq!(requested, "3");
            assert!(!available.is_empty());
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn rate_and_compare_on_a_small_deblur() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), CONFIG);
    cmd_run(&cfg).unwrap();
    let em = cmd_rate(&trace_path(&cfg, "em"), DEFAULT_TAIL, &RateThresholds::default()).unwrap();
    assert_eq!(em.classification, RateClass::Linear);

    let cmp = cmd_compare(&[trace_path(&cfg, "em"), trace_path(&cfg, "kpp"), trace_path(&cfg, "tr")]).unwrap();
    assert_eq!(cmp.labels[cmp.baseline], "em");
    for c in &cmp.crossovers {
        assert!(c.iteration.is_some_and(|k| k <= 50), "{c:?}");
    }
    let same = cmd_compare(&[trace_path(&cfg, "em"), trace_path(&cfg, "em")]).unwrap();
    assert_eq!(same.crossovers[0].iteration, None);
}

#[test]
fn traces_of_different_instances_are_not_compared() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = config_in(dir.path(), CONFIG);
    a.output_dir = dir.path().join("a");
    let mut b = config_in(dir.path(), &CONFIG.replace("sigma = 2.0", "sigma = 3.0"));
    b.output_dir = dir.path().join("b");
    cmd_run(&a).unwrap();
    cmd_run(&b).unwrap();
    let err = cmd_compare(&[trace_path(&a, "em"), trace_path(&b, "em")]).unwrap_err();
    assert!(matches!(err, Error::InstanceMismatch(..)));
}

#[test]
fn instance_file_reproduces_the_phantom_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_in(dir.path(), CONFIG);
    cmd_run(&cfg).unwrap();
    let from_file = CONFIG.replace(
        "source = \"phantom\"\nsigma = 2.0\nphantom = { pixels = 16, rails = [[5], [10]], rail_height = 1.0, background = 0.1 }",
        "source = \"file\"\npath = \"out/instance.json\"",
    );
    let mut replay = config_in(dir.path(), &from_file);
    replay.output_dir = dir.path().join("replay");
    cmd_run(&replay).unwrap();
    for name in ["em", "kpp", "tr"] {
        let a = TraceFile::read(&trace_path(&cfg, name)).unwrap();
        let b = TraceFile::read(&trace_path(&replay, name)).unwrap();
        assert_eq!(a.header_value("instance_hash"), b.header_value("instance_hash"));
        assert_eq!(a.timeless_rows(), b.timeless_rows(), "{name}");
    }
}

fn kpp_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_kpp"))
}

#[test]
fn command_line_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("experiment.toml");
    std::fs::write(&config, format!("output_dir = \"out\"\n{CONFIG}")).unwrap();
    let out = dir.path().join("cli");

    let run = kpp_bin()
        .arg("run")
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));

    let rate = kpp_bin().arg("rate").arg(out.join("em.csv")).output().unwrap();
    assert!(rate.status.success());
    assert!(String::from_utf8_lossy(&rate.stdout).contains("linear"));

    let compare = kpp_bin()
        .arg("compare")
        .args([out.join("em.csv"), out.join("tr.csv")])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(compare.status.success());
    assert!(String::from_utf8_lossy(&compare.stdout).contains("crossover tr: "));
    assert!(out.join("comparison.csv").exists());

    let snap = kpp_bin()
        .arg("snapshot")
        .arg(out.join("kpp.csv"))
        .args(["--iterations", "0,final"])
        .output()
        .unwrap();
    assert!(snap.status.success());
    assert!(out.join("kpp.selected.csv").exists());

    let missing = kpp_bin().arg("rate").arg(out.join("nope.csv")).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
}

#[test]
fn exit_codes_separate_solver_and_config_failures() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    let mut start = vec!["1.0"; 16];
    start[3] = "0.0";
    std::fs::write(dir.path().join("theta0.json"), format!("[{}]", start.join(","))).unwrap();
    std::fs::write(
        &config,
        format!(
            "output_dir = \"out\"\nfloor = 1e-12\n[theta0]\nrule = \"from_file\"\npath = \"theta0.json\"\n{CONFIG}"
        ),
    )
    .unwrap();
    let run = kpp_bin().arg("run").arg("--config").arg(&config).output().unwrap();
    assert_eq!(run.status.code(), Some(2), "{}", String::from_utf8_lossy(&run.stderr));
    let summary = std::fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);

    std::fs::write(
        dir.path().join("theta0.json"),
        format!("[{}]", vec!["-1.0"; 16].join(",")),
    )
    .unwrap();
    let config = dir.path().join("worse.toml");
    std::fs::write(
        &config,
        format!("output_dir = \"out2\"\n[theta0]\nrule = \"from_file\"\npath = \"theta0.json\"\n{CONFIG}"),
    )
    .unwrap();
    let run = kpp_bin().arg("run").arg("--config").arg(&config).output().unwrap();
    assert_eq!(run.status.code(), Some(1));
}

#[test]
fn bundled_config_kpp_needs_fewer_iterations_than_em() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/deblur64.toml")).unwrap();
    cfg.output_dir = dir.path().to_path_buf();
    let outcome = cmd_run(&cfg).unwrap();
    let em = outcome
        .summary("em")
        .unwrap()
        .iterations_to_tolerance
        .unwrap_or(usize::MAX);
    let kpp = outcome.summary("kpp").unwrap().iterations_to_tolerance.unwrap();
    assert!(kpp < em, "kpp {kpp}, em {em}");
    let rate = cmd_rate(&dir.path().join("em.csv"), DEFAULT_TAIL, &RateThresholds::default()).unwrap();
    assert_eq!(rate.classification, RateClass::Linear);
}
