//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand};
use pskf_core::sim::bound_check;
use pskf_core::stats::{component_stats, solve_eta_for_lambda};
use pskf_core::MareProblem;
use serde::Serialize;

use crate::config::{ConfigError, Experiment, ExperimentConfig};
use crate::output::write_summary_csv;
use crate::parallel;
use crate::report::{analysis_report, MatricesJson, SimulationInputs, SimulationReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_UNREADABLE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_TRUNCATED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pskf", version, about = "Power-scheduled sequential Kalman filter experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo simulation of the closed loop.
    Simulate {
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of trials (overrides the config).
        #[arg(long)]
        trials: Option<usize>,
        /// Master seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fixed point and stability conditions of the Riccati-type recursion.
    Analyze {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Threshold giving a target information rate.
    SolveThreshold {
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        lambda: f64,
    },
}

struct Failure {
    code: i32,
    error: anyhow::Error,
}

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_INVALID,
        error: e.into(),
    }
}

fn io_failure(e: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: EXIT_UNREADABLE,
        error: e.into(),
    }
}

fn from_config(e: ConfigError) -> Failure {
    Failure {
        code: if e.is_unreadable() { EXIT_UNREADABLE } else { EXIT_INVALID },
        error: e.into(),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                return EXIT_INVALID;
            }
            let _ = write!(stdout, "{text}");
            return EXIT_OK;
        }
    };
    let result = match cli.command {
        Command::Simulate {
            config,
            out,
            trials,
            seed,
        } => simulate(&config, out, trials, seed, stderr),
        Command::Analyze { config, out } => analyze(&config, out, stderr),
        Command::SolveThreshold { beta, lambda } => solve_threshold(beta, lambda, stdout),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "error: {:#}", f.error);
            f.code
        }
    }
}

// Overrides are applied to the parsed document before validation, so
// validation sees exactly what will run.
fn validate(cfg: &ExperimentConfig, stderr: &mut dyn Write) -> Result<Experiment, Failure> {
    let exp = cfg.to_experiment().map_err(from_config)?;
    let report = exp.system.validate().map_err(invalid)?;
    for msg in &report.messages {
        let _ = writeln!(stderr, "warning: {msg}");
    }
    if exp.whitened {
        let _ = writeln!(stderr, "note: R is not diagonal; measurements are whitened before filtering");
    }
    Ok(exp)
}

fn echo_thresholds(exp: &Experiment, stderr: &mut dyn Write) -> Result<(), Failure> {
    for (i, s) in exp.scheduler.component_stats().map_err(invalid)?.iter().enumerate() {
        let _ = writeln!(
            stderr,
            "component {}: eta={} lambda={} mu={}",
            i + 1,
            s.eta,
            s.lambda,
            s.mu
        );
    }
    Ok(())
}

fn prepare_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(io_failure)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(io_failure)?;
    text.push('\n');
    std::fs::write(path, text)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(io_failure)
}

fn problem_of(exp: &Experiment) -> Result<MareProblem, Failure> {
    let lambdas = exp.scheduler.lambdas().map_err(invalid)?;
    MareProblem::new(exp.working.clone(), lambdas).map_err(invalid)
}

fn simulate(
    path: &Path,
    out: Option<PathBuf>,
    trials: Option<usize>,
    seed: Option<u64>,
    stderr: &mut dyn Write,
) -> Result<i32, Failure> {
    let mut cfg = ExperimentConfig::load(path).map_err(from_config)?;
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if let Some(dir) = out {
        cfg.output.dir = dir;
    }
    let exp = validate(&cfg, stderr)?;
    echo_thresholds(&exp, stderr)?;
    let workers = parallel::workers_from_env().map_err(|e| invalid(anyhow::anyhow!(e)))?;

    let problem = problem_of(&exp)?;
    let summary = parallel::monte_carlo(
        &exp.working,
        &exp.scheduler,
        exp.horizon,
        exp.trials,
        exp.master_seed,
        workers,
    )
    .map_err(invalid)?;
    let bounds = bound_check(&summary, &problem);

    let dir = exp.output.dir.clone();
    prepare_dir(&dir)?;
    let csv_path = dir.join("summary.csv");
    let file = std::fs::File::create(&csv_path)
        .with_context(|| format!("cannot write {}", csv_path.display()))
        .map_err(io_failure)?;
    write_summary_csv(std::io::BufWriter::new(file), &summary, &bounds).map_err(io_failure)?;

    let stats = exp.scheduler.component_stats().map_err(invalid)?;
    let mu: Vec<f64> = stats.iter().map(|s| s.mu).collect();
    let report = SimulationReport::new(SimulationInputs {
        summary: &summary,
        bounds: &bounds,
        master_seed: exp.master_seed,
        whitened: exp.whitened,
        eta: &exp.scheduler.eta,
        lambdas: &problem.lambdas,
        mu: &mu,
    });
    write_json(&dir.join("summary.json"), &report)?;
    write_json(&dir.join("effective_config.json"), &exp.effective_config())?;
    if exp.output.full_matrices {
        write_json(&dir.join("matrices.json"), &MatricesJson::new(&summary))?;
    }
    let _ = writeln!(
        stderr,
        "{} trials x {} steps, {} truncated, {} of {} steps outside the covariance bounds; wrote {}",
        summary.trials,
        summary.horizon,
        summary.truncated_trials,
        bounds.flagged,
        bounds.steps.len(),
        dir.display()
    );
    Ok(if summary.truncated_trials > 0 {
        EXIT_TRUNCATED
    } else {
        EXIT_OK
    })
}

fn analyze(path: &Path, out: Option<PathBuf>, stderr: &mut dyn Write) -> Result<i32, Failure> {
    let mut cfg = ExperimentConfig::load(path).map_err(from_config)?;
    if let Some(dir) = out {
        cfg.output.dir = dir;
    }
    let exp = validate(&cfg, stderr)?;
    echo_thresholds(&exp, stderr)?;
    let problem = problem_of(&exp)?;
    let report = analysis_report(&problem, &exp.analysis);
    prepare_dir(&exp.output.dir)?;
    write_json(&exp.output.dir.join("analysis.json"), &report)?;
    write_json(&exp.output.dir.join("effective_config.json"), &exp.effective_config())?;
    if let Some(status) = &report.status {
        let _ = writeln!(stderr, "fixed-point iteration {status} after {} iterations", report.iterations);
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct ThresholdAnswer {
    beta: f64,
    lambda: f64,
    eta: f64,
    mu: f64,
}

fn solve_threshold(beta: f64, lambda: f64, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let eta = solve_eta_for_lambda(lambda, beta).map_err(invalid)?;
    let s = component_stats(eta, beta).map_err(invalid)?;
    let answer = ThresholdAnswer {
        beta,
        lambda: s.lambda,
        eta,
        mu: s.mu,
    };
    let text = serde_json::to_string(&answer).map_err(io_failure)?;
    writeln!(stdout, "{text}").map_err(io_failure)?;
    Ok(EXIT_OK)
}
