//! Spatial-adaptive branch scheduling for multi-view 3D detection.
//!
//! Each frame, tracked objects are forecast, summarized per camera view,
//! scored against every deployed inference branch, and assigned one branch
//! per view under a latency budget. A deterministic scene simulator with
//! synthetic detectors closes the loop for training and evaluation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod branches;
pub mod cli;
pub mod error;
pub mod io;
pub mod metrics;
pub mod predictors;
pub mod rng;
pub mod scheduler;
pub mod simulator;
pub mod tracker;
pub mod types;

pub use error::{Error, Result};

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
