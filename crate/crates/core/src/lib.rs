//! Operator-learning extrapolation toolkit.
//!
//! The crate is organised bottom-up:
//!
//! - [`nd`]: dense linear algebra, activations, second-order jets, small
//!   multilayer perceptrons with mixed-mode differentiation, and optimizers.
//! - [`fields`]: Gaussian random field kernels and samplers for input functions.
//! - [`wasserstein`]: 2-Wasserstein distance between Gaussian fields and
//!   power-law fitting of error against distance.
//! - [`problem`] and [`solvers`]: the benchmark operators (antiderivative,
//!   diffusion-reaction, Burgers, advection), their residuals and reference solvers.
//! - [`dataset`] and [`deeponet`]: operator datasets, the DeepONet model and
//!   its data-driven and physics-informed training.
//! - [`extrapolation`]: mismatch errors, threshold calibration and the
//!   fine-tuning repair methods.
//! - [`multifidelity`]: GPR, two-level co-kriging and multifidelity networks.

// Negated comparisons are used on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod deeponet;
pub mod error;
pub mod extrapolation;
pub mod fields;
pub mod interp;
pub mod multifidelity;
pub mod nd;
pub mod problem;
pub mod solvers;
pub mod wasserstein;

pub use error::{Error, Result};
