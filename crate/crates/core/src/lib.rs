//! Intent profiling and translation through learned discrete messages.
//!
//! Mobile devices describe their task intents to the network with symbols
//! from a small vocabulary whose meaning is learned; the network learns to map
//! those symbols to slice allocations. Training uses multi-agent PPO with a
//! centralized critic, compared against perfect-knowledge, random and
//! self-selection baselines.

// NaN must fail range checks, so they are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod engine;
pub mod env;
pub mod error;
pub mod harness;
pub mod protocol;
pub mod scenario;
pub mod seeding;

pub use error::{Error, Result};
pub use scenario::Scenario;
