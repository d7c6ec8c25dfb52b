//! Decentralized optimization over simulated fading wireless networks with
//! over-the-air consensus.

// negated comparisons deliberately reject NaN alongside out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod apsm;
pub mod baselines;
pub mod channel;
pub mod config;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod otac;
pub mod rng;
pub mod schedule;
pub mod sparsity;
pub mod state;
pub mod suites;

pub use error::{Error, Result};
