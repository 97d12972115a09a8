//! Experiment runner: configuration files, the staged pipeline and artifact
//! writers on top of `kwl_core`.

// `!(x > 0.0)` is how NaN gets rejected along with the nonpositive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod output;
pub mod pipeline;
