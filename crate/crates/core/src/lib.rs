//! Solar flare forecasting with class-dependent rewards.
//!
//! The crate bundles a small reverse-mode tensor engine, the time-series
//! Transformer classifier and an MLP baseline, two trainers (weighted
//! cross-entropy and the class-dependent-reward replay loop), forecast
//! verification metrics, exact Shapley attribution, and the magnetogram
//! feature formulas used to build the input series.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod explain;
pub mod features;
pub mod models;
pub mod seed;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
