//! Experiment harness for DeepONet extrapolation studies: configs, the dataset
//! container, the repair-method registry, sweeps and result tables.

// Negated comparisons are used on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod container;
pub mod error;
pub mod experiments;
pub mod registry;
pub mod table;

pub use error::{HarnessError, HarnessResult};
