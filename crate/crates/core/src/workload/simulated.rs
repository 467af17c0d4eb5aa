//! A synthetic host whose meters, collectors and load drivers share one
//! state, used for desk-scale runs and tests.

use std::sync::{Arc, Mutex};

use super::{DriverError, LoadDriver, PhaseTarget, SimProfile};
use crate::attribution::{attribute, ProcessCpuDelta};
use crate::clock::Clock;
use crate::meters::{simulated_host_power, SampleError, Sampler};
use crate::telemetry::{
    CpuSample, Direction, MeterDescriptor, MeterFamily, MeterId, PhaseKind, PowerSample, Reading, Scope,
    ThroughputSample, TimestampMs,
};

pub const SIM_INTERFACE: &str = "sim0";
const FRAME_BYTES: f64 = 1470.0;

/// Processes sharing the simulated CPU time, with their fixed shares.
const SIM_PROCESSES: [(u32, &str, f64); 4] = [
    (1101, "open5gs-upfd", 0.70),
    (1102, "open5gs-smfd", 0.12),
    (1103, "open5gs-amfd", 0.08),
    (1, "systemd", 0.10),
];

/// Per-timestamp noise seed; every meter on the host sees the same draw at
/// the same instant, so the hardware/software difference stays noise-free.
pub fn noise_seed(seed: u64, t: TimestampMs) -> u64 {
    let mut z = seed ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct SimState {
    load: f64,
    throughput_mbps: f64,
}

/// Shared handle to one simulated machine.
#[derive(Clone, Debug)]
pub struct SimHost {
    profile: Arc<SimProfile>,
    state: Arc<Mutex<SimState>>,
}

impl SimHost {
    pub fn new(profile: SimProfile) -> Self {
        Self {
            profile: Arc::new(profile),
            state: Arc::new(Mutex::new(SimState::default())),
        }
    }

    pub fn profile(&self) -> &SimProfile {
        &self.profile
    }

    fn state(&self) -> SimState {
        *self.state.lock().expect("sim state lock")
    }

    fn set(&self, load: f64, throughput_mbps: f64) {
        *self.state.lock().expect("sim state lock") = SimState { load, throughput_mbps };
    }

    pub fn power_at(&self, t: TimestampMs, family: MeterFamily) -> Result<f64, SampleError> {
        let s = self.state();
        let mut profile = (*self.profile).clone();
        profile.seed = noise_seed(profile.seed, t);
        Ok(simulated_host_power(s.load, s.throughput_mbps, &profile, family)?)
    }
}

pub struct SimPowerMeter {
    host: SimHost,
    descriptor: MeterDescriptor,
}

impl SimPowerMeter {
    pub fn new(host: SimHost, id: impl Into<String>, family: MeterFamily) -> Self {
        Self {
            host,
            descriptor: MeterDescriptor::simulated(id, family),
        }
    }
}

impl Sampler for SimPowerMeter {
    fn name(&self) -> &str {
        self.descriptor.meter_id.as_str()
    }

    fn descriptors(&self) -> Vec<MeterDescriptor> {
        vec![self.descriptor.clone()]
    }

    fn sample(&mut self, clock: &dyn Clock) -> Result<Vec<Reading>, SampleError> {
        let t = clock.now_ms();
        let mw = self.host.power_at(t, self.descriptor.family)?;
        Ok(vec![Reading::Power(PowerSample::new(
            t,
            self.descriptor.meter_id.clone(),
            Scope::Host,
            mw,
        ))])
    }
}

pub struct SimNetSampler {
    host: SimHost,
}

impl SimNetSampler {
    pub fn new(host: SimHost) -> Self {
        Self { host }
    }
}

impl Sampler for SimNetSampler {
    fn name(&self) -> &str {
        SIM_INTERFACE
    }

    fn sample(&mut self, clock: &dyn Clock) -> Result<Vec<Reading>, SampleError> {
        let bps = self.host.state().throughput_mbps * 1e6;
        Ok(vec![Reading::Throughput(ThroughputSample {
            timestamp_ms: clock.now_ms(),
            interface: SIM_INTERFACE.to_owned(),
            direction: Direction::Rx,
            bits_per_second: bps,
            packets_per_second: bps / (8.0 * FRAME_BYTES),
        })])
    }
}

pub struct SimCpuSampler {
    host: SimHost,
    source: MeterId,
}

impl SimCpuSampler {
    pub fn new(host: SimHost) -> Self {
        Self {
            host,
            source: MeterId::new("sim-cpu"),
        }
    }
}

impl Sampler for SimCpuSampler {
    fn name(&self) -> &str {
        self.source.as_str()
    }

    fn sample(&mut self, clock: &dyn Clock) -> Result<Vec<Reading>, SampleError> {
        Ok(vec![Reading::Cpu(CpuSample {
            timestamp_ms: clock.now_ms(),
            source: self.source.clone(),
            utilization: self.host.state().load,
            per_core: None,
        })])
    }
}

/// Per-process attribution of the simulated software power over each
/// sampling interval.
pub struct SimProcessSampler {
    host: SimHost,
    last: Option<TimestampMs>,
}

impl SimProcessSampler {
    pub fn new(host: SimHost) -> Self {
        Self { host, last: None }
    }
}

impl Sampler for SimProcessSampler {
    fn name(&self) -> &str {
        "sim-procs"
    }

    fn prime(&mut self, clock: &dyn Clock) -> Result<(), SampleError> {
        self.last = Some(clock.now_ms());
        Ok(())
    }

    fn sample(&mut self, clock: &dyn Clock) -> Result<Vec<Reading>, SampleError> {
        let t = clock.now_ms();
        let start = self.last.replace(t).unwrap_or(t - 1000);
        if t <= start {
            return Err(SampleError("empty attribution window".into()));
        }
        let load = self.host.state().load;
        let busy_ms = load * (t - start) as f64;
        let deltas: Vec<ProcessCpuDelta> = SIM_PROCESSES
            .iter()
            .map(|&(pid, command, share)| ProcessCpuDelta {
                pid,
                command: command.to_owned(),
                cpu_time_delta: share * busy_ms,
                window: (start, t),
            })
            .collect();
        let host_mw = self.host.power_at(t, MeterFamily::Software)?;
        let record =
            attribute(host_mw, self.host.profile().idle_floor_mw, &deltas).map_err(|e| SampleError(e.to_string()))?;
        Ok(vec![Reading::Attribution(record)])
    }
}

/// Moves the shared host state to each phase's target, capped by the
/// profile's capacity.
pub struct SimLoadDriver {
    host: SimHost,
    kind: PhaseKind,
}

impl SimLoadDriver {
    pub fn new(host: SimHost) -> Self {
        Self {
            host,
            kind: PhaseKind::Idle,
        }
    }
}

impl LoadDriver for SimLoadDriver {
    fn name(&self) -> &str {
        "sim-load"
    }

    fn capabilities(&self) -> Vec<String> {
        vec!["traffic".into(), "cpu".into()]
    }

    fn handles(&self, _kind: &PhaseKind) -> bool {
        true
    }

    fn start(&mut self, target: &PhaseTarget) -> Result<(), DriverError> {
        let p = self.host.profile();
        self.kind = target.kind.clone();
        match target.kind {
            PhaseKind::Idle => self.host.set(0.0, 0.0),
            PhaseKind::Traffic { target_mbps } => {
                let t = p.achievable_mbps(target_mbps);
                self.host.set((p.load_per_mbps * t).min(1.0), t);
            }
            PhaseKind::Cpu { target_load } => self.host.set(target_load, 0.0),
        }
        Ok(())
    }

    fn achieved(&mut self) -> Result<Option<f64>, DriverError> {
        let s = self.host.state();
        Ok(Some(match self.kind {
            PhaseKind::Idle => 0.0,
            PhaseKind::Traffic { .. } => s.throughput_mbps,
            PhaseKind::Cpu { .. } => s.load,
        }))
    }

    fn stop(&mut self) -> Result<(), DriverError> {
        self.kind = PhaseKind::Idle;
        self.host.set(0.0, 0.0);
        Ok(())
    }
}

/// Factory for the synthetic meters, collectors and driver of one host.
#[derive(Clone, Debug)]
pub struct SimulatedAgent {
    pub host: SimHost,
}

impl SimulatedAgent {
    pub const HARDWARE_METER: &'static str = "sim-plug";
    pub const SOFTWARE_METER: &'static str = "sim-rapl";

    pub fn new(profile: SimProfile) -> Self {
        Self {
            host: SimHost::new(profile),
        }
    }

    /// Hardware and software power meters.
    pub fn meters(&self) -> Vec<Box<dyn Sampler>> {
        vec![
            Box::new(SimPowerMeter::new(
                self.host.clone(),
                Self::HARDWARE_METER,
                MeterFamily::Hardware,
            )),
            Box::new(SimPowerMeter::new(
                self.host.clone(),
                Self::SOFTWARE_METER,
                MeterFamily::Software,
            )),
        ]
    }

    /// Throughput, CPU and per-process collectors.
    pub fn collectors(&self) -> Vec<Box<dyn Sampler>> {
        vec![
            Box::new(SimNetSampler::new(self.host.clone())),
            Box::new(SimCpuSampler::new(self.host.clone())),
            Box::new(SimProcessSampler::new(self.host.clone())),
        ]
    }

    pub fn load_driver(&self) -> Box<dyn LoadDriver> {
        Box::new(SimLoadDriver::new(self.host.clone()))
    }
}
