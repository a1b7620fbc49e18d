//! Numerical laboratory for the stochastic GOY and Sabra shell models of
//! turbulence and their lambda-coupled linear-advection companion system.
//!
//! The crate covers pathwise SDE integration through an Ornstein-Uhlenbeck
//! splitting, pullback random-attractor approximation, lambda-continuity and
//! upper-semicontinuity experiments, squeezing-based Hausdorff-dimension
//! bounds, and structure-function statistics. The `shellflow` binary exposes
//! each experiment as a subcommand.

pub mod attractor;
pub mod bilinear;
pub mod cli;
pub mod noise;
pub mod error;
pub mod integrator;
pub mod rng;
pub mod shell_core;
pub mod stats;

pub use error::{Result, ShellError};
