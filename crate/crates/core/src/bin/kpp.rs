use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kpp::harness::{
    cmd_compare, cmd_rate, cmd_run, cmd_snapshot, parse_iterations, selected_path, ExperimentConfig, RateThresholds,
    DEFAULT_TAIL,
};

#[derive(Parser)]
#[command(name = "kpp", version, about = "EM and Kullback proximal point experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every solver in a config and write traces
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the Poisson noise seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Classify the convergence rate of a trace
    Rate {
        trace: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TAIL)]
        tail: f64,
        #[arg(long)]
        linear_min: Option<f64>,
        #[arg(long)]
        linear_max: Option<f64>,
        #[arg(long)]
        superlinear_max: Option<f64>,
        #[arg(long)]
        slope_tol: Option<f64>,
    },
    /// Align log-likelihoods of several traces and report crossovers
    Compare {
        #[arg(required = true, num_args = 2..)]
        traces: Vec<PathBuf>,
        /// Write the table to DIR/comparison.csv instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extract stored iterates as a matrix file
    Snapshot {
        trace: PathBuf,
        /// Comma-separated iterations; `final` is the last one
        #[arg(long, default_value = "")]
        iterations: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> kpp::Result<ExitCode> {
    match command {
        Command::Run { config, out, seed } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            if let Some(seed) = seed {
                cfg.override_seed(seed);
            }
            let outcome = cmd_run(&cfg)?;
            for (name, result) in &outcome.solvers {
                match result {
                    Ok(s) => println!(
                        "{name}: {:?} after {} iterations, l = {:.12e}, |grad|_inf = {:.3e}",
                        s.status, s.iterations, s.final_log_likelihood, s.final_grad_inf
                    ),
                    Err(e) => eprintln!("{name}: failed: {e}"),
                }
            }
            println!("wrote {}", outcome.output_dir.display());
            Ok(if outcome.all_succeeded() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Rate {
            trace,
            tail,
            linear_min,
            linear_max,
            superlinear_max,
            slope_tol,
        } => {
            let d = RateThresholds::default();
            let thresholds = RateThresholds {
                linear_min: linear_min.unwrap_or(d.linear_min),
                linear_max: linear_max.unwrap_or(d.linear_max),
                superlinear_max: superlinear_max.unwrap_or(d.superlinear_max),
                slope_tol: slope_tol.unwrap_or(d.slope_tol),
            };
            print!("{}", cmd_rate(&trace, tail, &thresholds)?.render());
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare { traces, out } => {
            let cmp = cmd_compare(&traces)?;
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    std::fs::write(dir.join("comparison.csv"), cmp.render_table())?;
                }
                None => print!("{}", cmp.render_table()),
            }
            print!("{}", cmp.render_report());
            Ok(ExitCode::SUCCESS)
        }
        Command::Snapshot { trace, iterations, out } => {
            let list = parse_iterations(&iterations)?;
            if let Some(dir) = &out {
                std::fs::create_dir_all(dir)?;
            }
            let path = cmd_snapshot(&trace, &list, &selected_path(&trace, out.as_deref()))?;
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
