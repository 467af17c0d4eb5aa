//! Power-meter drivers.
//!
//! Every driver, and every collector in [`crate::collectors`], implements
//! [`Sampler`], so a single [`sample_loop`] can drive any of them.

mod counters;
mod plug;
mod sampler;
mod simulated;

use thiserror::Error;

use crate::clock::Clock;
use crate::telemetry::{MeterDescriptor, Reading};

pub use counters::{counter_delta, power_from_counters, CounterMeter, EnergyCounterReading, DEFAULT_CEILING_MW};
pub use plug::{plug_query, plug_query_with_clock, MockPlug, MockPlugBehavior, PlugClient, PLUG_PATH};
pub use sampler::{sample_loop, thread_cpu_time_ms, LoopConfig, LoopReport, SamplerEvent, MIN_PERIOD_MS};
pub use simulated::simulated_host_power;

pub use crate::telemetry::{MeterFamily, MeterKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeterError {
    /// Transient: the meter did not answer in time or refused the request.
    #[error("meter unavailable: {0}")]
    MeterUnavailable(String),
    #[error("meter protocol error: {reason} (raw payload: {raw:?})")]
    MeterProtocolError { reason: String, raw: String },
    #[error("invalid sampling interval of {0} ms")]
    InvalidInterval(i64),
    #[error("implausible reading: {power_mw} mW exceeds the {ceiling_mw} mW ceiling")]
    ImplausibleReading { power_mw: f64, ceiling_mw: f64 },
    #[error("counter mismatch: {0}")]
    CounterMismatch(String),
    #[error("input outside model domain: {0}")]
    DomainError(String),
    #[error("sample period {0} ms is below the {MIN_PERIOD_MS} ms minimum")]
    PeriodTooShort(u64),
    #[error("i/o error: {0}")]
    Io(String),
}

impl MeterError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, MeterError::MeterUnavailable(_) | MeterError::Io(_))
    }
}

impl From<std::io::Error> for MeterError {
    fn from(e: std::io::Error) -> Self {
        MeterError::Io(e.to_string())
    }
}

/// Failure of one sampling attempt; the loop records it as a gap.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct SampleError(pub String);

impl From<MeterError> for SampleError {
    fn from(e: MeterError) -> Self {
        SampleError(e.to_string())
    }
}

impl From<crate::collectors::CollectorError> for SampleError {
    fn from(e: crate::collectors::CollectorError) -> Self {
        SampleError(e.to_string())
    }
}

/// A periodically polled telemetry source.
pub trait Sampler: Send {
    /// Stable name used in gap events.
    fn name(&self) -> &str;

    /// Meters this sampler contributes to the run inventory.
    fn descriptors(&self) -> Vec<MeterDescriptor> {
        Vec::new()
    }

    /// Takes baseline readings for counter-based sources.
    fn prime(&mut self, _clock: &dyn Clock) -> Result<(), SampleError> {
        Ok(())
    }

    fn sample(&mut self, clock: &dyn Clock) -> Result<Vec<Reading>, SampleError>;
}

impl<S: Sampler + ?Sized> Sampler for Box<S> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn descriptors(&self) -> Vec<MeterDescriptor> {
        (**self).descriptors()
    }

    fn prime(&mut self, clock: &dyn Clock) -> Result<(), SampleError> {
        (**self).prime(clock)
    }

    fn sample(&mut self, clock: &dyn Clock) -> Result<Vec<Reading>, SampleError> {
        (**self).sample(clock)
    }
}
