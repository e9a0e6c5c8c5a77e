//! Sensor-side power scheduling and the lossy low-power link.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::stats::{component_stats, ComponentStats};

/// Thresholds and link/energy parameters shared by all components.
#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerConfig {
    pub eta: Vec<f64>,
    pub beta: f64,
    pub delta_high: f64,
    pub delta_low: f64,
}

impl SchedulerConfig {
    pub fn new(eta: Vec<f64>, beta: f64, delta_high: f64, delta_low: f64) -> Result<Self> {
        let cfg = Self {
            eta,
            beta,
            delta_high,
            delta_low,
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        for &e in &self.eta {
            if !(e >= 0.0) || e.is_infinite() {
                return Err(Error::InvalidArgument {
                    name: "eta",
                    value: e,
                    reason: "thresholds must be finite and non-negative",
                });
            }
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidArgument {
                name: "beta",
                value: self.beta,
                reason: "must lie in (0, 1)",
            });
        }
        if !(self.delta_low > 0.0) {
            return Err(Error::InvalidArgument {
                name: "delta_low",
                value: self.delta_low,
                reason: "must be positive",
            });
        }
        if !(self.delta_high > self.delta_low) || self.delta_high.is_infinite() {
            return Err(Error::InvalidArgument {
                name: "delta_high",
                value: self.delta_high,
                reason: "must be finite and exceed delta_low",
            });
        }
        Ok(())
    }

    pub fn components(&self) -> usize {
        self.eta.len()
    }

    pub fn component_stats(&self) -> Result<Vec<ComponentStats>> {
        self.eta.iter().map(|&e| component_stats(e, self.beta)).collect()
    }

    /// Information rates `lambda_i`.
    pub fn lambdas(&self) -> Result<Vec<f64>> {
        Ok(self.component_stats()?.iter().map(|s| s.lambda).collect())
    }
}

/// Everything that happened to one component in one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotOutcome {
    pub gamma: bool,
    pub beta_bit: bool,
    pub epsilon: f64,
    pub energy: f64,
    pub delivered: bool,
}

impl SlotOutcome {
    pub fn new(gamma: bool, beta_bit: bool, epsilon: f64, cfg: &SchedulerConfig) -> Self {
        let beta_bit = gamma || beta_bit;
        Self {
            gamma,
            beta_bit,
            epsilon,
            energy: if gamma { cfg.delta_high } else { cfg.delta_low },
            delivered: beta_bit,
        }
    }
}

/// Normalized innovation and the power decision: high power iff `|eps| > eta`.
pub fn schedule(y: f64, z_pred: f64, sigma: f64, eta: f64) -> (bool, f64) {
    let eps = (y - z_pred) / sigma;
    (eps.abs() > eta, eps)
}

/// Link outcome. High-power sends always arrive and consume no randomness.
pub fn transmit<R: Rng + ?Sized>(gamma: bool, beta: f64, rng: &mut R) -> bool {
    gamma || rng.random_bool(beta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyLedger {
    pub total: f64,
    pub high_count: u64,
    pub low_count: u64,
    /// Fraction of high-power sends, `NaN` when there were no sends.
    pub high_rate: f64,
}

pub fn energy_ledger<'a, I>(outcomes: I) -> EnergyLedger
where
    I: IntoIterator<Item = &'a SlotOutcome>,
{
    let mut total = 0.0;
    let (mut high, mut low) = (0u64, 0u64);
    for o in outcomes {
        total += o.energy;
        if o.gamma {
            high += 1;
        } else {
            low += 1;
        }
    }
    let count = high + low;
    EnergyLedger {
        total,
        high_count: high,
        low_count: low,
        high_rate: if count == 0 {
            f64::NAN
        } else {
            high as f64 / count as f64
        },
    }
}
