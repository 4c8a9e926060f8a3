//! Nonlocal diffusion flows on periodic grids with rough kernels, plus the
//! energy and oscillation diagnostics used to study their regularity.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // negated comparisons are deliberate NaN guards

pub mod degiorgi;
pub mod ensemble;
pub mod error;
pub mod flow;
pub mod grid;
pub mod kernels;
pub mod operator;
pub mod oscillation;
pub mod potentials;
pub mod quadrature;
pub mod rng;

pub use error::{Error, Result};
