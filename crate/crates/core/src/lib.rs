//! Online feedback-based projected gradient descent for time-varying convex
//! problems with inexact gradients, Bernoulli-intermittent output
//! measurements and concurrent Gaussian-process cost learning.
//!
//! * [`subweibull`]: tail-class descriptors and reference error samplers.
//! * [`problem`]: linear plant, quadratic costs, box schedules, optimizer oracle.
//! * [`algorithm`]: the online iteration and trajectory records.
//! * [`bounds`]: expectation and high-probability tracking-error bounds.
//! * [`gplearn`]: per-coordinate GP regression of the unknown input cost.
//! * [`scenario`]: the 6-DER demand-response experiment.
//! * [`validation`]: Monte Carlo checks of the bounds.
//! * [`cli`]: the `feedopt` command line.

// `!(x > 0.0)` guards reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithm;
pub mod bounds;
pub mod cli;
pub mod config;
pub mod csvout;
pub mod error;
pub mod gplearn;
pub mod par;
pub mod problem;
pub mod scenario;
pub mod subweibull;
pub mod validation;

pub use error::{Error, Result};
