//! Remote estimator: time prediction and the per-component sequential update.
//!
//! Components are processed in index order. Each one either delivers its
//! measurement (high-power send, or a low-power send that survived the link)
//! or not; a missing component still carries the information that its
//! normalized innovation was inside the threshold, which shrinks the
//! covariance by the factor `nu`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::LinearSystem;
use crate::stats::ComponentStats;

/// Eigenvalues in `(-PSD_FLOOR, 0)` are treated as round-off and clipped.
pub const PSD_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x_hat: DVector<f64>,
    pub p: DMatrix<f64>,
    pub k: u64,
}

impl FilterState {
    pub fn new(x_hat: DVector<f64>, p: DMatrix<f64>) -> Self {
        Self { x_hat, p, k: 0 }
    }

    /// The prior `(x0_mean, P0)` at `k = 0`.
    pub fn from_prior(sys: &LinearSystem) -> Self {
        Self::new(sys.x0_mean.clone(), sys.p0.clone())
    }
}

/// What the estimator learns about component `index` (0-based) in one slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotUpdateInput {
    pub index: usize,
    pub y: Option<f64>,
    pub gamma: bool,
    /// Link outcome of a low-power send; ignored when `gamma` is set.
    pub beta_bit: bool,
}

impl SlotUpdateInput {
    /// `s(gamma, beta) = gamma + (1 - gamma) beta`.
    pub fn delivered(&self) -> bool {
        self.gamma || self.beta_bit
    }

    pub fn high_power(index: usize, y: f64) -> Self {
        Self {
            index,
            y: Some(y),
            gamma: true,
            beta_bit: true,
        }
    }

    pub fn low_power_arrived(index: usize, y: f64) -> Self {
        Self {
            index,
            y: Some(y),
            gamma: false,
            beta_bit: true,
        }
    }

    pub fn dropped(index: usize) -> Self {
        Self {
            index,
            y: None,
            gamma: false,
            beta_bit: false,
        }
    }
}

/// Covariance weight `t = gamma + (1-gamma)(beta + (1-beta) nu)`.
pub fn shrink_factor(gamma: bool, beta_bit: bool, nu: f64) -> f64 {
    if gamma || beta_bit {
        1.0
    } else {
        nu
    }
}

/// Intermediates of one component update.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotTrace {
    pub index: usize,
    pub z_pred: f64,
    pub sigma: f64,
    /// Normalized innovation, known to the estimator only when delivered.
    pub epsilon: Option<f64>,
    pub gain: DVector<f64>,
    pub shrink: f64,
}

/// `x ← A x`, `P ← A P A' + Q`.
pub fn predict(state: &FilterState, sys: &LinearSystem) -> FilterState {
    let mut p = &sys.a * &state.p * sys.a.transpose() + &sys.q;
    linalg::symmetrize_in_place(&mut p);
    FilterState {
        x_hat: &sys.a * &state.x_hat,
        p,
        k: state.k + 1,
    }
}

/// Predicted measurement `C_i x` and innovation scale `sqrt(C_i P C_i' + R_i)`.
pub fn innovation_stats(state: &FilterState, sys: &LinearSystem, i: usize) -> (f64, f64) {
    let c = sys.c.row(i);
    let z_pred = (c * &state.x_hat)[0];
    let var = (c * &state.p * c.transpose())[0] + sys.r[(i, i)];
    (z_pred, libm::sqrt(var))
}

fn check_slot(sys: &LinearSystem, input: &SlotUpdateInput) -> Result<()> {
    if input.index >= sys.meas_dim() {
        return Err(Error::InvalidArgument {
            name: "component index",
            value: input.index as f64,
            reason: "exceeds the number of measurement components",
        });
    }
    if input.y.is_some() != input.delivered() {
        return Err(Error::InconsistentSlot { index: input.index });
    }
    Ok(())
}

fn update_traced(
    state: &FilterState,
    sys: &LinearSystem,
    input: &SlotUpdateInput,
    stats_i: &ComponentStats,
) -> Result<(FilterState, SlotTrace)> {
    check_slot(sys, input)?;
    let i = input.index;
    let c = sys.c.row(i);
    let pc = &state.p * c.transpose();
    let z_pred = (c * &state.x_hat)[0];
    let var = (c * &pc)[0] + sys.r[(i, i)];
    let sigma = libm::sqrt(var);
    let gain = &pc / var;

    let mut x_hat = state.x_hat.clone();
    let epsilon = input.y.map(|y| {
        x_hat.axpy(y - z_pred, &gain, 1.0);
        (y - z_pred) / sigma
    });

    let t = shrink_factor(input.gamma, input.beta_bit, stats_i.nu);
    // K C_i P = P C_i' C_i P / var
    let mut p = &state.p - (&gain * pc.transpose()) * t;
    linalg::symmetrize_in_place(&mut p);
    linalg::psd_floor(&mut p, PSD_FLOOR);

    Ok((
        FilterState {
            x_hat,
            p,
            k: state.k,
        },
        SlotTrace {
            index: i,
            z_pred,
            sigma,
            epsilon,
            gain,
            shrink: t,
        },
    ))
}

/// One component of the measurement update.
pub fn update_component(
    state: &FilterState,
    sys: &LinearSystem,
    input: &SlotUpdateInput,
    stats_i: &ComponentStats,
) -> Result<FilterState> {
    update_traced(state, sys, input, stats_i).map(|(s, _)| s)
}

fn check_step(sys: &LinearSystem, state: &FilterState, stats: &[ComponentStats]) -> Result<()> {
    let n = sys.state_dim();
    linalg::check_shape(&state.p, "P", n, n)?;
    if state.x_hat.len() != n {
        return Err(Error::DimensionMismatch {
            what: "x_hat",
            expected_rows: n,
            expected_cols: 1,
            rows: state.x_hat.len(),
            cols: 1,
        });
    }
    if stats.len() != sys.meas_dim() {
        return Err(Error::DimensionMismatch {
            what: "component stats",
            expected_rows: sys.meas_dim(),
            expected_cols: 1,
            rows: stats.len(),
            cols: 1,
        });
    }
    if !sys.r_is_diagonal() {
        return Err(Error::NonDiagonalNoise);
    }
    Ok(())
}

/// Prediction followed by the `m` component updates, with slots given up front.
///
/// `slots[i]` must describe component `i`.
pub fn step(
    state: &FilterState,
    sys: &LinearSystem,
    slots: &[SlotUpdateInput],
    stats: &[ComponentStats],
) -> Result<(FilterState, Vec<SlotTrace>)> {
    if slots.len() != sys.meas_dim() {
        return Err(Error::DimensionMismatch {
            what: "slots",
            expected_rows: sys.meas_dim(),
            expected_cols: 1,
            rows: slots.len(),
            cols: 1,
        });
    }
    step_with(state, sys, stats, |i, _, _| {
        let slot = slots[i];
        if slot.index != i {
            return Err(Error::InvalidArgument {
                name: "slot order",
                value: slot.index as f64,
                reason: "slots must be listed in component order",
            });
        }
        Ok(slot)
    })
}

/// Like [`step`], but each slot is decided by `decide(i, z_pred, sigma)`
/// after components `0..i` have been absorbed.
///
/// This is how the sensor side sees the running estimate in closed loop.
pub fn step_with<F>(
    state: &FilterState,
    sys: &LinearSystem,
    stats: &[ComponentStats],
    mut decide: F,
) -> Result<(FilterState, Vec<SlotTrace>)>
where
    F: FnMut(usize, f64, f64) -> Result<SlotUpdateInput>,
{
    check_step(sys, state, stats)?;
    let mut cur = predict(state, sys);
    let mut trace = Vec::with_capacity(sys.meas_dim());
    for (i, st) in stats.iter().enumerate() {
        let (z_pred, sigma) = innovation_stats(&cur, sys, i);
        let input = decide(i, z_pred, sigma)?;
        if input.index != i {
            return Err(Error::InconsistentSlot { index: i });
        }
        let (next, tr) = update_traced(&cur, sys, &input, st)?;
        cur = next;
        trace.push(tr);
    }
    Ok((cur, trace))
}
