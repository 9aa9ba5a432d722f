//! Planning engine for two-arm time-to-event trials.
//!
//! Sample size and follow-up duration for superiority and non-inferiority
//! designs under exponential, Weibull and Gompertz survival, plus a Monte
//! Carlo engine that checks the designs with Cox-model inference.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod design;
pub mod error;
pub mod event_probability;
pub mod inference;
pub mod numerics;
pub mod plan;
pub mod simulator;
pub mod survmodels;

pub use error::{Error, ErrorKind, Result};
