//! Closed-loop trials and their Monte Carlo aggregation.
//!
//! Each trial runs the sensor, the link, and the estimator against a
//! simulated plant. The estimator's mean is shifted back to the origin after
//! every step (state and estimate move together), which keeps the simulated
//! numbers small even for an unstable `A`; the recursion is invariant under
//! that shift, so nothing observable changes.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::channel::{self, energy_ledger, SchedulerConfig, SlotOutcome};
use crate::error::{Error, Result};
use crate::filter::{self, FilterState, SlotUpdateInput};
use crate::linalg;
use crate::mare::{self, MareProblem};
use crate::model::LinearSystem;
use crate::stats::ComponentStats;

/// Trials whose covariance trace passes this are cut short.
pub const TRACE_CEILING: f64 = 1e12;

/// Seed of trial `index` derived from the master seed (SplitMix64 finalizer).
pub fn trial_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One closed-loop run. Step `k` (1-based) lives at index `k - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub seed: u64,
    pub initial_p: DMatrix<f64>,
    /// `x_k − x̂_{k|k}`.
    pub errors: Vec<DVector<f64>>,
    /// `P_{k|k}`.
    pub covariances: Vec<DMatrix<f64>>,
    /// Per-slot outcomes; empty for steps after a truncation.
    pub outcomes: Vec<Vec<SlotOutcome>>,
    pub energy: Vec<f64>,
    /// First step whose covariance trace exceeded the ceiling. Later steps
    /// repeat that step's error and covariance.
    pub truncated_at: Option<usize>,
}

impl TrialRecord {
    pub fn horizon(&self) -> usize {
        self.covariances.len()
    }

    pub fn truncated(&self) -> bool {
        self.truncated_at.is_some()
    }
}

fn check_inputs(sys: &LinearSystem, cfg: &SchedulerConfig) -> Result<Vec<ComponentStats>> {
    sys.check()?;
    cfg.check()?;
    if cfg.components() != sys.meas_dim() {
        return Err(Error::DimensionMismatch {
            what: "eta",
            expected_rows: sys.meas_dim(),
            expected_cols: 1,
            rows: cfg.components(),
            cols: 1,
        });
    }
    if !sys.r_is_diagonal() {
        return Err(Error::NonDiagonalNoise);
    }
    cfg.component_stats()
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

struct Noise {
    q_factor: DMatrix<f64>,
    r_sd: Vec<f64>,
}

pub fn simulate_trial(sys: &LinearSystem, cfg: &SchedulerConfig, horizon: usize, seed: u64) -> Result<TrialRecord> {
    let stats = check_inputs(sys, cfg)?;
    Ok(run_trial(sys, cfg, &stats, &noise_of(sys), horizon, seed))
}

fn noise_of(sys: &LinearSystem) -> Noise {
    Noise {
        q_factor: linalg::gaussian_factor(&sys.q),
        r_sd: (0..sys.meas_dim()).map(|i| libm::sqrt(sys.r[(i, i)])).collect(),
    }
}

fn run_trial(
    sys: &LinearSystem,
    cfg: &SchedulerConfig,
    stats: &[ComponentStats],
    noise: &Noise,
    horizon: usize,
    seed: u64,
) -> TrialRecord {
    let n = sys.state_dim();
    let m = sys.meas_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut e = linalg::gaussian_factor(&sys.p0) * normals(&mut rng, n);
    let mut state = FilterState::new(DVector::zeros(n), sys.p0.clone());

    let mut rec = TrialRecord {
        seed,
        initial_p: sys.p0.clone(),
        errors: Vec::with_capacity(horizon),
        covariances: Vec::with_capacity(horizon),
        outcomes: Vec::with_capacity(horizon),
        energy: Vec::with_capacity(horizon),
        truncated_at: None,
    };

    for k in 1..=horizon {
        if rec.truncated_at.is_some() {
            rec.errors.push(e.clone());
            rec.covariances.push(state.p.clone());
            rec.outcomes.push(Vec::new());
            rec.energy.push(0.0);
            continue;
        }
        let x = &sys.a * &e + &noise.q_factor * normals(&mut rng, n);
        let mut slots = Vec::with_capacity(m);
        let (next, _) = filter::step_with(&state, sys, stats, |i, z_pred, sigma| {
            let v: f64 = rng.sample(StandardNormal);
            let y = (sys.c.row(i) * &x)[0] + noise.r_sd[i] * v;
            let (gamma, eps) = channel::schedule(y, z_pred, sigma, cfg.eta[i]);
            let beta_bit = channel::transmit(gamma, cfg.beta, &mut rng);
            let outcome = SlotOutcome::new(gamma, beta_bit, eps, cfg);
            slots.push(outcome);
            Ok(SlotUpdateInput {
                index: i,
                y: outcome.delivered.then_some(y),
                gamma,
                beta_bit,
            })
        })
        .expect("inputs validated before the trial");

        e = x - &next.x_hat;
        state = FilterState {
            x_hat: DVector::zeros(n),
            p: next.p,
            k: next.k,
        };
        let ledger = energy_ledger(&slots);
        rec.energy.push(ledger.total);
        rec.outcomes.push(slots);
        rec.errors.push(e.clone());
        rec.covariances.push(state.p.clone());

        let tr = state.p.trace();
        if !tr.is_finite() || tr > TRACE_CEILING || !e.iter().all(|v| v.is_finite()) {
            rec.truncated_at = Some(k);
        }
    }
    rec
}

/// Runs two closures, possibly in parallel, and returns both results.
///
/// Monte Carlo aggregation follows a fixed binary tree over trial indices;
/// an implementation only decides where the two halves run, never how they
/// are combined, so results do not depend on it.
pub trait Join: Sync {
    fn join<A, B, FA, FB>(&self, a: FA, b: FB) -> (A, B)
    where
        FA: FnOnce() -> A + Send,
        FB: FnOnce() -> B + Send,
        A: Send,
        B: Send;
}

/// Runs both halves on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Join for Sequential {
    fn join<A, B, FA, FB>(&self, a: FA, b: FB) -> (A, B)
    where
        FA: FnOnce() -> A + Send,
        FB: FnOnce() -> B + Send,
        A: Send,
        B: Send,
    {
        (a(), b())
    }
}

/// Sums over trials, merged pairwise.
#[derive(Debug, Clone)]
struct Accum {
    trials: u64,
    truncated: u64,
    sum_p: Vec<DMatrix<f64>>,
    sum_p2: Vec<DMatrix<f64>>,
    sum_ee: Vec<DMatrix<f64>>,
    energy: Vec<f64>,
    active: Vec<u64>,
    high: Vec<Vec<u64>>,
}

impl Accum {
    fn from_trial(rec: &TrialRecord, m: usize) -> Self {
        let k = rec.horizon();
        let mut high = vec![vec![0u64; m]; k];
        let mut active = vec![0u64; k];
        for (step, slots) in rec.outcomes.iter().enumerate() {
            if !slots.is_empty() {
                active[step] = 1;
            }
            for (i, o) in slots.iter().enumerate() {
                high[step][i] = o.gamma as u64;
            }
        }
        Self {
            trials: 1,
            truncated: rec.truncated() as u64,
            sum_p: rec.covariances.clone(),
            sum_p2: rec.covariances.iter().map(|p| p.component_mul(p)).collect(),
            sum_ee: rec.errors.iter().map(|e| e * e.transpose()).collect(),
            energy: rec.energy.clone(),
            active,
            high,
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.trials += other.trials;
        self.truncated += other.truncated;
        for (a, b) in self.sum_p.iter_mut().zip(&other.sum_p) {
            *a += b;
        }
        for (a, b) in self.sum_p2.iter_mut().zip(&other.sum_p2) {
            *a += b;
        }
        for (a, b) in self.sum_ee.iter_mut().zip(&other.sum_ee) {
            *a += b;
        }
        for (a, b) in self.energy.iter_mut().zip(&other.energy) {
            *a += b;
        }
        for (a, b) in self.active.iter_mut().zip(&other.active) {
            *a += b;
        }
        for (a, b) in self.high.iter_mut().zip(&other.high) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        self
    }
}

/// Averages over trials; index `k - 1` holds step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSummary {
    pub horizon: usize,
    pub trials: usize,
    pub truncated_trials: usize,
    pub initial_p: DMatrix<f64>,
    /// Mean of the reported `P_{k|k}`.
    pub mean_p: Vec<DMatrix<f64>>,
    /// Elementwise standard error of `mean_p` (zero for a single trial).
    pub mean_p_se: Vec<DMatrix<f64>>,
    /// `(1/N) Σ e_k e_k'`, the error second moment about zero.
    pub empirical_cov: Vec<DMatrix<f64>>,
    /// Mean energy per step among trials still running at that step.
    pub energy_per_step: Vec<f64>,
    pub mean_energy_per_step: f64,
    /// Fraction of high-power sends at each step, per component.
    pub high_rate_per_step: Vec<Vec<f64>>,
    /// Overall fraction of high-power sends per component.
    pub high_power_rate: Vec<f64>,
    /// Number of slots behind each entry of `high_power_rate`.
    pub slots_per_component: u64,
}

impl MonteCarloSummary {
    fn from_accum(acc: Accum, initial_p: DMatrix<f64>, m: usize) -> Self {
        let nt = acc.trials as f64;
        let mean_p: Vec<DMatrix<f64>> = acc.sum_p.iter().map(|s| linalg::symmetrize(&(s / nt))).collect();
        let mean_p_se = acc
            .sum_p2
            .iter()
            .zip(&mean_p)
            .map(|(s2, mean)| {
                if acc.trials < 2 {
                    return DMatrix::zeros(mean.nrows(), mean.ncols());
                }
                let var = (s2 / nt - mean.component_mul(mean)) * (nt / (nt - 1.0));
                var.map(|v| libm::sqrt(v.max(0.0) / nt))
            })
            .collect();
        let empirical_cov = acc.sum_ee.iter().map(|s| linalg::symmetrize(&(s / nt))).collect();
        let energy_per_step: Vec<f64> = acc
            .energy
            .iter()
            .zip(&acc.active)
            .map(|(&e, &a)| if a == 0 { f64::NAN } else { e / a as f64 })
            .collect();
        let active_total: u64 = acc.active.iter().sum();
        let energy_total: f64 = acc.energy.iter().sum();
        let high_rate_per_step = acc
            .high
            .iter()
            .zip(&acc.active)
            .map(|(h, &a)| h.iter().map(|&c| if a == 0 { f64::NAN } else { c as f64 / a as f64 }).collect())
            .collect();
        let high_power_rate = (0..m)
            .map(|i| {
                let c: u64 = acc.high.iter().map(|h| h[i]).sum();
                if active_total == 0 {
                    f64::NAN
                } else {
                    c as f64 / active_total as f64
                }
            })
            .collect();
        Self {
            horizon: mean_p.len(),
            trials: acc.trials as usize,
            truncated_trials: acc.truncated as usize,
            initial_p,
            mean_p,
            mean_p_se,
            empirical_cov,
            energy_per_step,
            mean_energy_per_step: if active_total == 0 { f64::NAN } else { energy_total / active_total as f64 },
            high_rate_per_step,
            high_power_rate,
            slots_per_component: active_total,
        }
    }
}

/// Monte Carlo over `trials` independent closed-loop runs, on one thread.
pub fn monte_carlo(
    sys: &LinearSystem,
    cfg: &SchedulerConfig,
    horizon: usize,
    trials: usize,
    master_seed: u64,
) -> Result<MonteCarloSummary> {
    monte_carlo_with(sys, cfg, horizon, trials, master_seed, &Sequential)
}

/// As [`monte_carlo`], with the reduction tree driven by `joiner`.
pub fn monte_carlo_with<J: Join>(
    sys: &LinearSystem,
    cfg: &SchedulerConfig,
    horizon: usize,
    trials: usize,
    master_seed: u64,
    joiner: &J,
) -> Result<MonteCarloSummary> {
    if trials == 0 {
        return Err(Error::InvalidArgument {
            name: "trials",
            value: 0.0,
            reason: "at least one trial is required",
        });
    }
    let stats = check_inputs(sys, cfg)?;
    let noise = noise_of(sys);
    let m = sys.meas_dim();
    let leaf = |idx: usize| {
        let rec = run_trial(sys, cfg, &stats, &noise, horizon, trial_seed(master_seed, idx as u64));
        Accum::from_trial(&rec, m)
    };
    let acc = reduce(0, trials, &leaf, joiner);
    Ok(MonteCarloSummary::from_accum(acc, sys.p0.clone(), m))
}

fn reduce<J: Join, F: Fn(usize) -> Accum + Sync>(lo: usize, hi: usize, leaf: &F, joiner: &J) -> Accum {
    if hi - lo == 1 {
        return leaf(lo);
    }
    let mid = lo + (hi - lo) / 2;
    let (a, b) = joiner.join(|| reduce(lo, mid, leaf, joiner), || reduce(mid, hi, leaf, joiner));
    a.merge(b)
}

/// Sandwich check at one step `k`, comparing `mean_p[k-1]` with the bounds
/// computed from the previous mean.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundStep {
    pub k: usize,
    pub lower_trace: f64,
    pub upper_trace: f64,
    /// `max(0, −λ_min(mean_P_k − lower))`.
    pub lower_violation: f64,
    /// `max(0, −λ_min(upper − mean_P_k))`.
    pub upper_violation: f64,
    pub slack: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub steps: Vec<BoundStep>,
    pub flagged: usize,
}

impl BoundReport {
    pub fn flagged_fraction(&self) -> f64 {
        if self.steps.is_empty() {
            0.0
        } else {
            self.flagged as f64 / self.steps.len() as f64
        }
    }
}

/// Standard errors allowed on each side of the sandwich.
pub const BOUND_SE_FACTOR: f64 = 5.0;

/// Checks `∏(1−λ) h(M) ⪯ M_next ⪯ φ(M)` step by step, `M` being the mean
/// reported covariance (`M_0 = P0`).
///
/// This is the sandwich for the filtered covariance. Mapping both sides
/// through `h` gives the predicted-covariance form
/// `∏(1−λ) A N A' + Q ⪯ N_next ⪯ h(ℳ_m(N))` with `N = h(M)`, so it is implied.
///
/// Each comparison gets a slack of five standard errors of `M_next`, scaled by
/// `n` to pass from an elementwise to a spectral bound, plus a round-off floor.
pub fn bound_check(summary: &MonteCarloSummary, problem: &MareProblem) -> BoundReport {
    let n = problem.n();
    let prod: f64 = problem.lambdas.iter().map(|l| 1.0 - l).product();
    let mut steps = Vec::with_capacity(summary.horizon);
    let mut flagged = 0;
    for k in 1..=summary.horizon {
        let prev = if k == 1 { &summary.initial_p } else { &summary.mean_p[k - 2] };
        let cur = &summary.mean_p[k - 1];
        let lower = mare::h_op(prev, &problem.sys) * prod;
        let upper = mare::varphi(prev, problem);
        let se = linalg::max_abs(&summary.mean_p_se[k - 1]);
        let scale = 1.0 + linalg::max_abs(cur).max(linalg::max_abs(&upper));
        let slack = BOUND_SE_FACTOR * n as f64 * se + 1e-9 * scale;
        let lower_violation = (-linalg::min_eigenvalue(&(cur - &lower))).max(0.0);
        let upper_violation = (-linalg::min_eigenvalue(&(&upper - cur))).max(0.0);
        let is_flagged = lower_violation > slack || upper_violation > slack;
        flagged += is_flagged as usize;
        steps.push(BoundStep {
            k,
            lower_trace: lower.trace(),
            upper_trace: upper.trace(),
            lower_violation,
            upper_violation,
            slack,
            flagged: is_flagged,
        });
    }
    BoundReport { steps, flagged }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::solve_eta_for_lambda;

    fn scalar_system() -> LinearSystem {
        LinearSystem::new(
            DMatrix::from_element(1, 1, 1.2),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 1.0]),
            DVector::zeros(1),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    fn cfg_for(lambda: f64, beta: f64, m: usize) -> SchedulerConfig {
        let eta = solve_eta_for_lambda(lambda, beta).unwrap();
        SchedulerConfig::new(vec![eta; m], beta, 1.0, 0.1).unwrap()
    }

    #[test]
    fn seeds_differ_and_repeat() {
        assert_eq!(trial_seed(7, 3), trial_seed(7, 3));
        assert_ne!(trial_seed(7, 3), trial_seed(7, 4));
        assert_ne!(trial_seed(7, 3), trial_seed(8, 3));
    }

    #[test]
    fn trial_is_deterministic() {
        let sys = scalar_system();
        let cfg = cfg_for(0.6, 0.3, 2);
        let a = simulate_trial(&sys, &cfg, 50, 99).unwrap();
        let b = simulate_trial(&sys, &cfg, 50, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.horizon(), 50);
        assert!(a.outcomes.iter().all(|o| o.len() == 2));
    }

    #[test]
    fn scalar_example_trace_stays_bounded() {
        let sys = scalar_system();
        let cfg = cfg_for(0.6, 0.3, 2);
        let rec = simulate_trial(&sys, &cfg, 500, 1).unwrap();
        assert!(!rec.truncated());
        assert!(rec.covariances.iter().all(|p| p[(0, 0)].is_finite() && p[(0, 0)] < 1e3));
    }

    #[test]
    fn near_noiseless_error_decays() {
        let sys = LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.0, 0.7]),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2) * 1e-10,
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let cfg = SchedulerConfig::new(vec![0.0, 0.0], 0.5, 1.0, 0.1).unwrap();
        let rec = simulate_trial(&sys, &cfg, 40, 3).unwrap();
        assert!(rec.errors.last().unwrap().amax() < 1e-3);
    }

    #[test]
    fn single_trial_summary_equals_trial() {
        let sys = scalar_system();
        let cfg = cfg_for(0.6, 0.3, 2);
        let sum = monte_carlo(&sys, &cfg, 30, 1, 5).unwrap();
        let rec = simulate_trial(&sys, &cfg, 30, trial_seed(5, 0)).unwrap();
        assert_eq!(sum.mean_p, rec.covariances);
        for (c, e) in sum.empirical_cov.iter().zip(&rec.errors) {
            assert_eq!(*c, e * e.transpose());
        }
        assert_eq!(sum.energy_per_step, rec.energy);
        assert!(sum.mean_p_se.iter().all(|s| s.amax() == 0.0));
    }

    #[test]
    fn zero_trials_rejected() {
        let sys = scalar_system();
        assert!(monte_carlo(&sys, &cfg_for(0.6, 0.3, 2), 10, 0, 1).is_err());
        let bad = SchedulerConfig::new(vec![1.0], 0.3, 1.0, 0.1).unwrap();
        assert!(monte_carlo(&sys, &bad, 10, 2, 1).is_err());
    }

    #[test]
    fn summary_is_reproducible() {
        let sys = scalar_system();
        let cfg = cfg_for(0.6, 0.3, 2);
        let a = monte_carlo(&sys, &cfg, 20, 37, 11).unwrap();
        let b = monte_carlo(&sys, &cfg, 20, 37, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_rate_bounds_are_equalities() {
        let sys = scalar_system();
        let cfg = SchedulerConfig::new(vec![0.0, 0.0], 0.3, 1.0, 0.1).unwrap();
        let sum = monte_carlo(&sys, &cfg, 50, 4, 2).unwrap();
        let problem = MareProblem::new(sys, vec![1.0, 1.0]).unwrap();
        let rep = bound_check(&sum, &problem);
        assert_eq!(rep.flagged, 0);
        for s in &rep.steps {
            let cur = sum.mean_p[s.k - 1].trace();
            assert!((s.upper_trace - cur).abs() < 1e-12 * (1.0 + cur));
        }
        assert_eq!(sum.high_power_rate, vec![1.0, 1.0]);
    }

    #[test]
    fn blind_sensors_follow_lyapunov_recursion() {
        let sys = LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.3, 0.0, 0.5]),
            DMatrix::zeros(1, 2),
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let cfg = SchedulerConfig::new(vec![1.0], 0.3, 1.0, 0.1).unwrap();
        let sum = monte_carlo(&sys, &cfg, 30, 3, 4).unwrap();
        let problem = MareProblem::new(sys.clone(), vec![0.0]).unwrap();
        let rep = bound_check(&sum, &problem);
        assert_eq!(rep.flagged, 0);
        let mut p = sys.p0.clone();
        for (k, s) in rep.steps.iter().enumerate() {
            p = &sys.a * &p * sys.a.transpose() + &sys.q;
            assert!(linalg::max_abs(&(&sum.mean_p[k] - &p)) < 1e-12);
            assert!((s.lower_trace - p.trace()).abs() < 1e-12);
        }
    }

    #[test]
    fn unstable_configuration_grows() {
        let sys = scalar_system();
        let cfg = cfg_for(0.1, 0.01, 2);
        let sum = monte_carlo(&sys, &cfg, 200, 500, 1).unwrap();
        let peak = sum.mean_p.iter().map(|p| p.trace()).fold(0.0, f64::max);
        assert!(peak > 1e3, "peak = {peak}");
    }

    #[test]
    fn blind_unstable_trial_is_truncated() {
        let sys = LinearSystem::new(
            DMatrix::from_element(1, 1, 1.5),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let cfg = SchedulerConfig::new(vec![1.0], 0.5, 1.0, 0.1).unwrap();
        let rec = simulate_trial(&sys, &cfg, 100, 0).unwrap();
        let k = rec.truncated_at.unwrap();
        assert!(rec.covariances[k - 1].trace() > TRACE_CEILING);
        assert!(rec.covariances[k - 2].trace() <= TRACE_CEILING);
        assert_eq!(rec.covariances[99], rec.covariances[k - 1]);
        assert!(rec.outcomes[k..].iter().all(|o| o.is_empty()));
        let sum = monte_carlo(&sys, &cfg, 100, 3, 0).unwrap();
        assert_eq!(sum.truncated_trials, 3);
        assert!(sum.energy_per_step[99].is_nan());
    }
}
