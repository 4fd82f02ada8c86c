//! Dynamic federated averaging under concept drift: a Monte Carlo simulator
//! for tracking a drifting logistic-regression model with partial agent
//! participation, mini-batches and multiple local epochs.

// Negated comparisons such as `!(x > 0.0)` are used on purpose to reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod environment;
pub mod error;
pub mod fedavg;
pub mod harness;
pub mod objective;
pub mod parallel;
pub mod population;
pub mod rng;
pub mod vector;

pub use error::{Error, Result};
pub use rng::{IndexSet, RngState};
pub use vector::ModelVector;
