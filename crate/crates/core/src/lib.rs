//! Single-server appointment scheduling under uncertain job durations.
//!
//! The crate is organised bottom-up:
//!
//! - [`cost`]: waiting/idling recursion, schedule cost and subgradients.
//! - [`distributions`]: moment-matched duration families, sampling, moments.
//! - [`datagen`]: synthetic covariate-driven datasets and their file format.
//! - [`lp`]: a dense two-phase simplex solver.
//! - [`solvers`]: newsvendor, SAA (subgradient and LP) and moment-based DRO.
//! - [`nn`]: feedforward predictors trained with separated (SEO) or
//!   integrated (IEO) losses.
//! - [`experiment`]: experiment orchestration, evaluation and reporting used
//!   by the `aspsched` binary.
//!
//! Hot loops (scenario sums, separation scans, batch gradients) run through
//! [`exec`], which uses rayon when the `parallel` feature is enabled and
//! falls back to plain iteration otherwise. Both paths reduce in the same
//! fixed order, so results are bit-identical either way.
// `!(x > 0.0)` style checks reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cost;
pub mod datagen;
pub mod distributions;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod lp;
pub mod nn;
pub mod rng;
pub mod solvers;

pub use cost::{evaluate_schedule, schedule_subgradient, CostBreakdown, CostParams, DurationVector, Schedule};
pub use error::{Error, Result};
pub use exec::Exec;
