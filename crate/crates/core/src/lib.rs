//! Deterministic simulation and evaluation of a pendulum-driven spherical robot
//! whose rocking motion sweeps a shell-mounted LiDAR.

// Negated comparisons are how parameter checks reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod control;
pub mod dynamics;
pub mod environment;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod sensors;

pub use error::{Error, Result};
