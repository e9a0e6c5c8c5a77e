//! Gaussian tail arithmetic and the per-component information rates.

use crate::error::{Error, Result};

const FRAC_2_PI_SQRT: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Standard normal upper tail `Q(x) = P(N(0,1) > x)`.
pub fn q_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x / core::f64::consts::SQRT_2)
}

/// `P(|N(0,1)| <= eta) = 1 - 2Q(eta)`, computed without cancellation near 0.
fn central_mass(eta: f64) -> f64 {
    libm::erf(eta / core::f64::consts::SQRT_2)
}

/// Truncated-Gaussian variance deficit `1 - E[e^2 | |e| <= eta]`.
///
/// Equals 1 at `eta = 0` (the limit) and decreases to 0 as `eta` grows.
pub fn nu(eta: f64) -> f64 {
    if eta == 0.0 {
        return 1.0;
    }
    let mass = central_mass(eta);
    let v = FRAC_2_PI_SQRT * eta * libm::exp(-0.5 * eta * eta) / mass;
    v.clamp(0.0, 1.0)
}

/// Scheduler statistics for one measurement component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentStats {
    pub eta: f64,
    pub beta: f64,
    /// Probability of a high-power send, `2Q(eta)`.
    pub mu: f64,
    pub nu: f64,
    /// Expected covariance weight of a low-power send, `beta + (1-beta) nu`.
    pub xi: f64,
    /// Information rate `mu + (1-mu) xi`.
    pub lambda: f64,
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidArgument {
            name: "beta",
            value: beta,
            reason: "must lie in (0, 1)",
        });
    }
    Ok(())
}

pub fn component_stats(eta: f64, beta: f64) -> Result<ComponentStats> {
    if !(eta >= 0.0) || eta.is_infinite() {
        return Err(Error::InvalidArgument {
            name: "eta",
            value: eta,
            reason: "must be finite and non-negative",
        });
    }
    check_beta(beta)?;
    Ok(stats_unchecked(eta, beta))
}

fn stats_unchecked(eta: f64, beta: f64) -> ComponentStats {
    let mu = (2.0 * q_tail(eta)).min(1.0);
    let nu = nu(eta);
    let xi = beta + (1.0 - beta) * nu;
    let lambda = mu + (1.0 - mu) * xi;
    ComponentStats {
        eta,
        beta,
        mu,
        nu,
        xi,
        lambda,
    }
}

/// Information rate as a function of the threshold.
pub fn lambda_of(eta: f64, beta: f64) -> Result<f64> {
    component_stats(eta, beta).map(|s| s.lambda)
}

// lambda(eta) - beta underflows long before this.
const ETA_SEARCH_MAX: f64 = 40.0;

/// Inverts `eta -> lambda(eta, beta)` by bisection.
///
/// The map is continuous and strictly decreasing from 1 at `eta = 0` towards
/// `beta`, so every target in `(beta, 1]` has a unique preimage.
pub fn solve_eta_for_lambda(lambda_target: f64, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    if !(lambda_target > beta && lambda_target <= 1.0) {
        return Err(Error::UnreachableRate {
            target: lambda_target,
            beta,
        });
    }
    if lambda_target == 1.0 {
        return Ok(0.0);
    }
    let f = |eta: f64| stats_unchecked(eta, beta).lambda - lambda_target;

    let mut hi = 1.0;
    while f(hi) > 0.0 {
        hi *= 2.0;
        if hi > ETA_SEARCH_MAX {
            if f(ETA_SEARCH_MAX) > 0.0 {
                return Err(Error::UnreachableRate {
                    target: lambda_target,
                    beta,
                });
            }
            hi = ETA_SEARCH_MAX;
            break;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (flo, fhi) = (f(lo).abs(), f(hi).abs());
    Ok(if flo <= fhi { lo } else { hi })
}
