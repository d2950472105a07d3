//! Exact subsampling Metropolis-Hastings for generalised linear models.
//!
//! The main entry points are [`cv::build_cache`], [`modefit::fit_mode`] and
//! [`samplers::run_chain`]; [`experiment`] wires them together for the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cv;
pub mod data;
pub mod diag;
pub mod error;
pub mod experiment;
pub mod glm;
pub mod modefit;
pub mod par;
pub mod samplers;
pub mod sidecar;
mod special;
pub mod thinning;

pub use error::{Error, Result};
