//! Probe-volume estimation from fixed-interval GPS footprints.
//!
//! Given the speeds recorded by probe vehicles inside a road cordon of length
//! `d`, with each probe logging a footprint every `t` seconds, the number of
//! probes that crossed the cordon is estimated as m̂ = (t/d)·Σ s. This crate
//! computes that estimate, its exact sampling distribution under a
//! truncated-normal-mixture speed model, the cordon length that minimizes its
//! error, Monte Carlo checks of the theory, and a through-origin calibration
//! of probe volume against traffic counts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod cli;
pub mod distribution;
pub mod error;
pub mod estimator;
pub mod footprint;
pub mod optimizer;
pub mod quadrature;
pub mod simulator;
pub mod speed_model;

pub use error::{Error, Result};
