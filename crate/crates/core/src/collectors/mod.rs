//! Host-side throughput, CPU and per-process samplers.
//!
//! All readers take a root directory so tests can point them at fixtures laid
//! out like `/sys/class/net` and `/proc`.

mod cpu;
mod net;
mod procs;

use thiserror::Error;

pub use cpu::{cpu_utilization, parse_proc_stat, CoreTicks, CpuTicks, CpuUtilization, ProcStatSampler};
pub use net::{throughput_from_counters, wrap_delta, CounterWidth, InterfaceCounters, InterfaceSpec, NetSampler};
pub use procs::{clock_ticks_per_second, parse_pid_stat, ProcessAttributionSampler, ProcessScanner, ProcessTimes};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CollectorError {
    #[error("invalid sampling interval of {0} ms")]
    InvalidInterval(i64),
    #[error("counter mismatch: {0}")]
    Mismatch(String),
    #[error("core {core} reported no elapsed ticks")]
    NoElapsedTicks { core: usize },
    #[error("implausible counters on {interface}: {detail}")]
    Implausible { interface: String, detail: String },
    #[error("cannot parse {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CollectorError {
    fn from(e: std::io::Error) -> Self {
        CollectorError::Io(e.to_string())
    }
}
