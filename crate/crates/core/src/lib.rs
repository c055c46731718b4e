//! Simulation core for distributed vertical power delivery: regulator
//! models, the resistive power plane, supervisory policies, workloads and
//! the co-simulation engine.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod converter;
pub mod engine;
pub mod oracle;
pub mod plane;
pub mod policy;
pub mod workload;
