//! Command-line driver for MPC performance-bound analysis: scenario loading,
//! the individual analyses, and the reproduction harness.

pub mod commands;
pub mod reproduce;
pub mod scenario;
