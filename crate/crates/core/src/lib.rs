//! Power measurement and experiment orchestration for softwarized mobile
//! network cores.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod attribution;
pub mod cli;
pub mod clock;
pub mod collectors;
pub mod config;
pub mod control;
pub mod ingest;
pub mod meters;
pub mod session;
pub mod telemetry;
pub mod workload;
