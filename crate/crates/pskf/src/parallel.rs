//! Rayon-backed Monte Carlo.

use pskf_core::sim::{self, Join};
use pskf_core::{LinearSystem, MonteCarloSummary, SchedulerConfig};

/// Environment variable overriding the number of worker threads.
pub const WORKERS_ENV: &str = "PSKF_WORKERS";

#[derive(Debug, Clone, Copy, Default)]
pub struct RayonJoin;

impl Join for RayonJoin {
    fn join<A, B, FA, FB>(&self, a: FA, b: FB) -> (A, B)
    where
        FA: FnOnce() -> A + Send,
        FB: FnOnce() -> B + Send,
        A: Send,
        B: Send,
    {
        rayon::join(a, b)
    }
}

/// Worker count from [`WORKERS_ENV`], if set to a positive integer.
pub fn workers_from_env() -> Result<Option<usize>, String> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("{WORKERS_ENV} must be a positive integer, got {v:?}")),
        },
    }
}

/// Parallel [`sim::monte_carlo`]; the result is identical for any `workers`.
pub fn monte_carlo(
    sys: &LinearSystem,
    cfg: &SchedulerConfig,
    horizon: usize,
    trials: usize,
    master_seed: u64,
    workers: Option<usize>,
) -> pskf_core::Result<MonteCarloSummary> {
    let run = || sim::monte_carlo_with(sys, cfg, horizon, trials, master_seed, &RayonJoin);
    match workers {
        None => run(),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        },
    }
}
