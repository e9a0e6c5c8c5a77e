//! JSON documents written by the CLI.

use nalgebra::{DMatrix, DVector};
use pskf_core::mare::{self, IterOptions, MareProblem};
use pskf_core::sim::BoundReport;
use pskf_core::MonteCarloSummary;
use serde::{Deserialize, Serialize};

use crate::config::{rows_of, AnalysisFlags, Rows};

/// Certificates must clear this margin to count.
pub const MARGIN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NecessaryJson {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficientJson {
    pub ok: bool,
    pub margin: Option<f64>,
    pub gains: Option<Vec<Vec<f64>>>,
    pub p_tilde: Option<Rows>,
    pub inflation_direction: Option<String>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub lambdas: Vec<f64>,
    pub status: Option<String>,
    pub fixed_point: Option<Rows>,
    pub iterations: usize,
    pub trace_history: Vec<f64>,
    pub necessary: Option<NecessaryJson>,
    pub sufficient: Option<SufficientJson>,
}

fn vector(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Runs the requested parts of the Riccati analysis.
pub fn analysis_report(problem: &MareProblem, flags: &AnalysisFlags) -> AnalysisReport {
    let opts = IterOptions::default();
    let zero = DMatrix::zeros(problem.n(), problem.n());
    let run = flags.mare_iterate.then(|| mare::iterate_fixed_point(problem, &zero, &opts));
    let sufficient = flags.sufficient.then(|| {
        let check = match &run {
            Some(run) => mare::certify(problem, run, MARGIN_TOL),
            None => mare::sufficient_check(problem, MARGIN_TOL),
        };
        let cert = check.certificate.as_ref();
        SufficientJson {
            ok: check.ok,
            margin: cert.map(|c| c.margin),
            gains: cert.map(|c| c.gains.iter().map(vector).collect()),
            p_tilde: cert.map(|c| rows_of(&c.p_tilde)),
            inflation_direction: cert.map(|c| c.direction.as_str().to_string()),
            notes: check.notes.clone(),
        }
    });
    let necessary = flags.necessary.then(|| {
        let n = mare::necessary_check(problem);
        NecessaryJson {
            lhs: n.lhs,
            rhs: n.rhs,
            ok: n.ok,
        }
    });
    AnalysisReport {
        lambdas: problem.lambdas.clone(),
        status: run.as_ref().map(|r| r.status.as_str().to_string()),
        fixed_point: run.as_ref().and_then(|r| r.fixed_point()).map(rows_of),
        iterations: run.as_ref().map_or(0, |r| r.iterations),
        trace_history: run.map_or_else(Vec::new, |r| r.trace_history),
        necessary,
        sufficient,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub horizon: usize,
    pub trials: usize,
    pub truncated_trials: usize,
    pub truncated: bool,
    pub master_seed: u64,
    pub whitened: bool,
    pub eta: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub mu: Vec<f64>,
    pub high_power_rate: Vec<f64>,
    pub slots_per_component: u64,
    pub mean_energy_per_step: f64,
    pub bound_steps_flagged: usize,
    pub bound_flagged_fraction: f64,
    /// Largest `|trace(empirical_cov) − trace(mean_P)| / trace(mean_P)` over steps.
    pub max_relative_cov_gap: f64,
    pub final_trace_mean_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatricesJson {
    pub mean_p: Vec<Rows>,
    pub mean_p_se: Vec<Rows>,
    pub empirical_cov: Vec<Rows>,
}

impl MatricesJson {
    pub fn new(summary: &MonteCarloSummary) -> Self {
        let all = |ms: &[DMatrix<f64>]| ms.iter().map(rows_of).collect();
        Self {
            mean_p: all(&summary.mean_p),
            mean_p_se: all(&summary.mean_p_se),
            empirical_cov: all(&summary.empirical_cov),
        }
    }
}

pub fn relative_cov_gap(summary: &MonteCarloSummary) -> f64 {
    summary
        .mean_p
        .iter()
        .zip(&summary.empirical_cov)
        .map(|(p, e)| {
            let tp = p.trace();
            (e.trace() - tp).abs() / tp
        })
        .fold(0.0, f64::max)
}

pub struct SimulationInputs<'a> {
    pub summary: &'a MonteCarloSummary,
    pub bounds: &'a BoundReport,
    pub master_seed: u64,
    pub whitened: bool,
    pub eta: &'a [f64],
    pub lambdas: &'a [f64],
    pub mu: &'a [f64],
}

impl SimulationReport {
    pub fn new(x: SimulationInputs<'_>) -> Self {
        let s = x.summary;
        Self {
            horizon: s.horizon,
            trials: s.trials,
            truncated_trials: s.truncated_trials,
            truncated: s.truncated_trials > 0,
            master_seed: x.master_seed,
            whitened: x.whitened,
            eta: x.eta.to_vec(),
            lambdas: x.lambdas.to_vec(),
            mu: x.mu.to_vec(),
            high_power_rate: s.high_power_rate.clone(),
            slots_per_component: s.slots_per_component,
            mean_energy_per_step: s.mean_energy_per_step,
            bound_steps_flagged: x.bounds.flagged,
            bound_flagged_fraction: x.bounds.flagged_fraction(),
            max_relative_cov_gap: relative_cov_gap(s),
            final_trace_mean_p: s.mean_p.last().map_or(f64::NAN, |p| p.trace()),
        }
    }
}
