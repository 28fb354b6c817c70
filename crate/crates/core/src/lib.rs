//! Mixtures of linear regressions, three ways.
//!
//! * [`em`] holds reference gradient-EM solvers (two-component symmetric,
//!   multi-component, batch EM over prompts) plus population-level oracles.
//! * [`tf`] builds an attention-only stack whose forward pass reproduces the
//!   gradient-EM iterates column by column.
//! * [`lsa`] is the single linear self-attention layer: forward pass,
//!   closed-form population loss, gradient-flow dynamics and empirical training.
//!
//! [`data`] owns the generative model and both embedding layouts, [`eval`]
//! the risk and rate metrics, and [`experiments`] the CSV-emitting runners
//! behind the `moricl` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod em;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod linalg;
pub mod lsa;
pub mod quadrature;
pub mod rng;
pub mod tf;

pub use error::{Error, Result};
