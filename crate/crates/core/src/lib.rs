//! Optimal power flow problems formulated as reinforcement-learning
//! environments, with a reference solver and a DDPG learner to benchmark
//! environment design choices.

// `!(x > 0.0)` is used on purpose so NaN fails validation too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod env;
pub mod error;
pub mod eval;
pub mod grid;
pub mod opf;
pub mod par;
pub mod powerflow;
pub mod rl;
pub mod scenarios;

pub use error::{Error, Result};
