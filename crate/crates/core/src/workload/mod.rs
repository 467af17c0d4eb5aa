//! Drivers that realize plan phases: external traffic generators, a CPU
//! load shaper and the fully simulated host.

mod profile;
mod simulated;
mod stress;
mod traffic;

use thiserror::Error;

use crate::clock::{CancelToken, Clock};
use crate::telemetry::PhaseKind;

pub use profile::{ProfileError, SimProfile, DEFAULT_CPU_POLY};
pub use simulated::{
    noise_seed, SimCpuSampler, SimHost, SimLoadDriver, SimNetSampler, SimPowerMeter, SimProcessSampler, SimulatedAgent,
    SIM_INTERFACE,
};
pub use stress::CpuStressDriver;
pub use traffic::{parse_rate_line, split_rate, ExternalTrafficDriver, GeneratorConfig, RateParser, TemplateVars};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DriverError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("driver failed: {0}")]
    Failed(String),
}

/// What a driver is asked to realize for one phase.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseTarget {
    pub index: usize,
    pub kind: PhaseKind,
    pub ue_count: u32,
    pub duration_s: f64,
}

impl PhaseTarget {
    /// Target in the driver's own unit: Mbps for traffic, load fraction for CPU.
    pub fn value(&self) -> f64 {
        match self.kind {
            PhaseKind::Idle => 0.0,
            PhaseKind::Traffic { target_mbps } => target_mbps,
            PhaseKind::Cpu { target_load } => target_load,
        }
    }
}

/// Something that puts load on the system under test.
pub trait LoadDriver: Send {
    fn name(&self) -> &str;

    /// Capability names this driver provides, e.g. `traffic` or `cpu`.
    fn capabilities(&self) -> Vec<String>;

    /// Whether this driver acts on phases of this kind. Idle phases stop
    /// every driver regardless.
    fn handles(&self, kind: &PhaseKind) -> bool;

    fn start(&mut self, target: &PhaseTarget) -> Result<(), DriverError>;

    /// Current achieved level in the target's unit, when measurable.
    fn achieved(&mut self) -> Result<Option<f64>, DriverError>;

    /// Stops all load. Must not return before child activities are gone.
    fn stop(&mut self) -> Result<(), DriverError>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct SettleRule {
    /// Allowed relative deviation from the target.
    pub tolerance: f64,
    /// Consecutive in-band checks required.
    pub consecutive: u32,
    pub interval_ms: u64,
    /// Checks after which a target that was never held is unreachable.
    pub max_checks: u32,
}

impl Default for SettleRule {
    fn default() -> Self {
        Self {
            tolerance: 0.05,
            consecutive: 3,
            interval_ms: 1000,
            max_checks: 15,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Settle {
    Steady,
    /// Target never held; carries the last achieved level.
    Unreachable {
        achieved: f64,
    },
    Cancelled,
}

/// Polls `driver` until it has held the target for the required number of
/// checks. On a lockstep clock nothing else advances time while an agent is
/// settling, so checks happen back to back.
pub fn settle(
    driver: &mut dyn LoadDriver,
    target: f64,
    rule: &SettleRule,
    clock: &dyn Clock,
    cancel: &CancelToken,
) -> Result<Settle, DriverError> {
    let mut in_band = 0;
    let mut last = 0.0;
    let mut next = clock.now_ms();
    for _ in 0..rule.max_checks {
        if !clock.is_lockstep() {
            next += rule.interval_ms as i64;
            if !clock.sleep_until(next, cancel) {
                return Ok(Settle::Cancelled);
            }
        } else if cancel.is_cancelled() {
            return Ok(Settle::Cancelled);
        }
        let Some(achieved) = driver.achieved()? else {
            // unmeasurable drivers are taken at their word
            return Ok(Settle::Steady);
        };
        last = achieved;
        if (achieved - target).abs() <= rule.tolerance * target.abs() {
            in_band += 1;
            if in_band >= rule.consecutive {
                return Ok(Settle::Steady);
            }
        } else {
            in_band = 0;
        }
    }
    Ok(Settle::Unreachable { achieved: last })
}
