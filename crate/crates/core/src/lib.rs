// `!(x > 0.0)` is used throughout to reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod modulation;
pub mod peaks;
pub mod pipeline;
pub mod simulator;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
