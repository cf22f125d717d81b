//! One-sided score test for "a coefficient function is identically zero" in
//! functional linear concurrent regression.
//!
//! Each coefficient function is a ridge-penalized B-spline, which makes the
//! regression an i.i.d. random-effects model; the hypothesis becomes a zero
//! variance component. The crate covers the whole path from irregular,
//! possibly noisy functional observations to a Monte Carlo p-value:
//!
//! - [`basis`]: B-spline bases, ridge penalties and their factors.
//! - [`design`]: datasets and the stacked random-effects design.
//! - [`fpca`]: residual covariance estimation and covariate reconstruction.
//! - [`likelihood`]: marginal likelihood through a Woodbury operator and
//!   bounded maximum-likelihood fits.
//! - [`score_test`]: score, information, null eigenvalues, simulated null law
//!   and the end-to-end [`score_test::run_test`] pipeline.
//! - [`simulate`]: synthetic Scenario A/B generators.
//!
//! The crate is `no_std` with `alloc`; IO, threading and the CLI live in the
//! companion `flcr` crate.

#![no_std]

extern crate alloc;

pub mod basis;
pub mod design;
pub mod error;
pub mod fpca;
pub mod likelihood;
pub mod rng;
pub mod score_test;
pub mod simulate;

pub use error::{Error, Result};
