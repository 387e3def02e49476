//! Kinematic-wave analysis of a ring road controlled by one pretimed signal.
//!
//! The crate simulates the boundary flow with a discrete link transmission
//! model, detects periodic (stationary) states, evaluates the closed-form
//! macroscopic fundamental diagram of those states and computes optimal
//! cycle lengths under start-up lost time. The simulation and closed-form
//! paths are built to cross-check each other.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod config;
mod error;
pub mod fundamentals;
pub mod harness;
pub mod ltm;
pub mod mfd;
pub mod optimizer;
pub mod par;

pub use error::{Error, Result};
pub use fundamentals::{
    effective_green_ratio, FundamentalDiagram, RingConfig, Scenario, SignalPlan,
};
pub use ltm::{CumulativeFlowSeries, SolverOptions, StationaryResult};
pub use mfd::{MfdPoint, PiMode, Regime};
pub use optimizer::{CongestionRegime, OptimalCycleResult};
