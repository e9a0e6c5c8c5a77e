//! Power-scheduled sequential Kalman filtering over a lossy link.
//!
//! The sensor sends each scalar measurement component either at high power
//! (always delivered) or, when its normalized innovation is small, at low
//! power (delivered with probability `beta`). The remote estimator exploits
//! both the delivered values and the knowledge that an undelivered component
//! had a small innovation. [`mare`] holds the Riccati-type operators used to
//! decide whether the expected error covariance stays bounded.
#![no_std]
// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod channel;
pub mod error;
pub mod filter;
pub mod linalg;
pub mod mare;
pub mod model;
pub mod sim;
pub mod stats;

pub use channel::{SchedulerConfig, SlotOutcome};
pub use error::{Error, Result};
pub use filter::{FilterState, SlotTrace, SlotUpdateInput};
pub use mare::{MareProblem, MareReport};
pub use model::{LinearSystem, ValidationReport};
pub use sim::{MonteCarloSummary, TrialRecord};
pub use stats::ComponentStats;
