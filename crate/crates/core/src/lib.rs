//! Dual-variable (Lagrange multiplier) controllers for cost-constrained
//! optimization, built around active disturbance rejection control (ADRC).
//!
//! The crate provides:
//!
//! - [`reference`](mod@reference): the critically damped budget-tightening trajectory r(t)
//!   that moves the effective cost threshold from the initial cost level to
//!   the limit `d` without overshoot.
//! - [`observer`]: a reduced-order extended state observer (ESO) that tracks
//!   the lumped disturbance acting on the cost channel, plus its
//!   estimation-error bound.
//! - [`controller`]: the multiplier update laws — classical (integral-only)
//!   Lagrangian, PID Lagrangian, and the ADRC law in continuous and clamped
//!   discrete forms — behind one interface.
//! - [`gains`]: observer-gain lower-bound machinery (online L1/L2 estimation,
//!   quartic manifold roots, the ω_o* bound) and the exact PID ↔ ADRC gain
//!   mappings.
//! - [`freq`]: transfer-function evaluation of the two disturbance-estimation
//!   error channels and numeric certification of the magnitude-ratio and
//!   phase-lag inequalities.
//! - [`surrogate`]: a closed-loop simulator of the relative-degree-2 cost
//!   channel with pluggable in-class disturbances, plus checkers for the
//!   ISS tracking tube, time-average violation bound, margin feasibility,
//!   and the disturbance-rate envelope.
//! - [`toycmdp`]: a desk-scale tabular constrained MDP with a REINFORCE
//!   trainer that exercises the controllers inside a genuine stochastic
//!   learning loop.
//! - [`metrics`]: episode-level safety metrics (violation rate, violation
//!   magnitude, average cost).
//! - [`acceptance`]: the self-test suite run by the CLI `selftest` command.

pub mod acceptance;
pub mod controller;
pub mod error;
pub mod freq;
pub mod gains;
pub mod metrics;
pub mod observer;
pub mod ode;
pub mod reference;
pub mod surrogate;
pub mod toycmdp;

pub use error::{Error, Result};
