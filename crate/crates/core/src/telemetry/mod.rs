//! Canonical telemetry types shared by every other module.
//!
//! Units are fixed across the crate: power in milliwatts, throughput in
//! bits per second on the wire types and megabits per second in analysis,
//! timestamps in milliseconds since the Unix epoch.

mod align;
mod export;
mod trace;

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::AttributionRecord;

pub use align::{align, AlignError, AlignedRow, Stream};
pub use export::{export_flat, flat_table, FlatTable};
pub use trace::{read_trace, read_trace_from, write_trace, write_trace_to, TraceError, TraceWriter, SCHEMA_VERSION};

pub type TimestampMs = i64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InvariantError {
    #[error("field `{field}`: {reason}")]
    Field { field: &'static str, reason: String },
    #[error("{0}")]
    Structure(String),
}

impl InvariantError {
    fn field(field: &'static str, reason: impl Into<String>) -> Self {
        InvariantError::Field {
            field,
            reason: reason.into(),
        }
    }

    /// Name of the offending field, when the violation is tied to one.
    pub fn field_name(&self) -> Option<&'static str> {
        match self {
            InvariantError::Field { field, .. } => Some(field),
            InvariantError::Structure(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeterId(pub String);

impl MeterId {
    pub fn new(id: impl Into<String>) -> Self {
        MeterId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MeterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for MeterId {
    fn from(s: &str) -> Self {
        MeterId(s.to_owned())
    }
}

/// What part of the system a power reading covers.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Scope {
    Host,
    HardwareDomain { name: String },
    Process { pid: u32, command: String },
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::Host => f.write_str("host"),
            Scope::HardwareDomain { name } => write!(f, "domain:{name}"),
            Scope::Process { pid, command } => write!(f, "process:{pid}:{command}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerSample {
    pub timestamp_ms: TimestampMs,
    pub source: MeterId,
    pub scope: Scope,
    pub power_mw: f64,
}

impl PowerSample {
    pub fn new(timestamp_ms: TimestampMs, source: MeterId, scope: Scope, power_mw: f64) -> Self {
        Self {
            timestamp_ms,
            source,
            scope,
            power_mw,
        }
    }

    pub fn validate(&self) -> Result<(), InvariantError> {
        if !self.power_mw.is_finite() || self.power_mw < 0.0 {
            return Err(InvariantError::field(
                "power_mw",
                format!("must be a finite non-negative value, got {}", self.power_mw),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Rx,
    Tx,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Rx => "rx",
            Direction::Tx => "tx",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputSample {
    pub timestamp_ms: TimestampMs,
    pub interface: String,
    pub direction: Direction,
    pub bits_per_second: f64,
    pub packets_per_second: f64,
}

impl ThroughputSample {
    pub fn mbps(&self) -> f64 {
        self.bits_per_second / 1e6
    }

    pub fn validate(&self) -> Result<(), InvariantError> {
        for (field, v) in [
            ("bits_per_second", self.bits_per_second),
            ("packets_per_second", self.packets_per_second),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(InvariantError::field(field, format!("must be non-negative, got {v}")));
            }
        }
        if self.packets_per_second == 0.0 && self.bits_per_second != 0.0 {
            return Err(InvariantError::field(
                "bits_per_second",
                "non-zero bit rate with zero packet rate",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpuSample {
    pub timestamp_ms: TimestampMs,
    pub source: MeterId,
    /// Fraction of total host capacity in use.
    pub utilization: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_core: Option<Vec<f64>>,
}

impl CpuSample {
    pub fn validate(&self) -> Result<(), InvariantError> {
        if !(0.0..=1.0).contains(&self.utilization) {
            return Err(InvariantError::field(
                "utilization",
                format!("must lie in [0, 1], got {}", self.utilization),
            ));
        }
        if let Some(cores) = &self.per_core {
            if cores.is_empty() {
                return Err(InvariantError::field("per_core", "empty core list"));
            }
            if cores.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(InvariantError::field("per_core", "core utilization outside [0, 1]"));
            }
            let mean = cores.iter().sum::<f64>() / cores.len() as f64;
            if (mean - self.utilization).abs() > 1e-9 {
                return Err(InvariantError::field(
                    "utilization",
                    format!("{} differs from per-core mean {mean}", self.utilization),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeploymentKind {
    BareMetal,
    VirtualMachine,
    Container,
}

impl DeploymentKind {
    /// Short label used for profile lookup and report rows.
    pub fn short(&self) -> &'static str {
        match self {
            DeploymentKind::BareMetal => "bm",
            DeploymentKind::VirtualMachine => "vm",
            DeploymentKind::Container => "co",
        }
    }
}

impl fmt::Display for DeploymentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Deployment {
    pub kind: DeploymentKind,
    /// Free-form label of the core software, e.g. "open5gs".
    #[serde(default = "default_software")]
    pub software: String,
}

fn default_software() -> String {
    "simulated".to_owned()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhaseKind {
    Idle,
    Traffic { target_mbps: f64 },
    Cpu { target_load: f64 },
}

impl PhaseKind {
    pub fn target_mbps(&self) -> f64 {
        match self {
            PhaseKind::Traffic { target_mbps } => *target_mbps,
            _ => 0.0,
        }
    }

    pub fn is_idle(&self) -> bool {
        matches!(self, PhaseKind::Idle)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PhaseRepr", into = "PhaseRepr")]
pub struct Phase {
    pub kind: PhaseKind,
    pub duration_s: f64,
}

/// Flat on-disk form of a phase: `kind`, optional target, `duration_s`.
#[derive(Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhaseRepr {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_mbps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target_load: Option<f64>,
    duration_s: f64,
}

impl TryFrom<PhaseRepr> for Phase {
    type Error = String;

    fn try_from(r: PhaseRepr) -> Result<Self, String> {
        let kind = match (r.kind.as_str(), r.target_mbps, r.target_load) {
            ("idle", None, None) => PhaseKind::Idle,
            ("traffic", Some(target_mbps), None) => PhaseKind::Traffic { target_mbps },
            ("cpu", None, Some(target_load)) => PhaseKind::Cpu { target_load },
            ("idle", ..) => return Err("idle phase takes no target".into()),
            ("traffic", ..) => return Err("traffic phase needs exactly `target_mbps`".into()),
            ("cpu", ..) => return Err("cpu phase needs exactly `target_load`".into()),
            (other, ..) => return Err(format!("unknown phase kind `{other}`")),
        };
        Ok(Phase {
            kind,
            duration_s: r.duration_s,
        })
    }
}

impl From<Phase> for PhaseRepr {
    fn from(p: Phase) -> Self {
        let (kind, target_mbps, target_load) = match p.kind {
            PhaseKind::Idle => ("idle", None, None),
            PhaseKind::Traffic { target_mbps } => ("traffic", Some(target_mbps), None),
            PhaseKind::Cpu { target_load } => ("cpu", None, Some(target_load)),
        };
        PhaseRepr {
            kind: kind.to_owned(),
            target_mbps,
            target_load,
            duration_s: p.duration_s,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub plan_id: String,
    pub deployment: Deployment,
    pub phases: Vec<Phase>,
    #[serde(default = "default_period")]
    pub sample_period_ms: u64,
    #[serde(default = "default_ue_count")]
    pub ue_count: u32,
    /// Name of the simulation profile used by `--simulate` runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_profile: Option<String>,
}

fn default_period() -> u64 {
    1000
}

fn default_ue_count() -> u32 {
    1
}

impl ExperimentPlan {
    /// Idle baseline followed by `steps` traffic plateaus spaced `step_mbps` apart.
    pub fn traffic_sweep(
        plan_id: impl Into<String>,
        deployment: Deployment,
        step_mbps: f64,
        steps: u32,
        phase_s: f64,
    ) -> Self {
        let mut phases = vec![Phase {
            kind: PhaseKind::Idle,
            duration_s: phase_s,
        }];
        phases.extend((1..=steps).map(|i| Phase {
            kind: PhaseKind::Traffic {
                target_mbps: step_mbps * f64::from(i),
            },
            duration_s: phase_s,
        }));
        Self {
            plan_id: plan_id.into(),
            deployment,
            phases,
            sample_period_ms: default_period(),
            ue_count: 1,
            sim_profile: None,
        }
    }

    pub fn validate(&self) -> Result<(), InvariantError> {
        if self.phases.is_empty() {
            return Err(InvariantError::field("phases", "plan has no phases"));
        }
        if self.sample_period_ms == 0 {
            return Err(InvariantError::field("sample_period_ms", "must be positive"));
        }
        if self.ue_count == 0 {
            return Err(InvariantError::field("ue_count", "must be at least 1"));
        }
        for (i, phase) in self.phases.iter().enumerate() {
            if !(phase.duration_s > 0.0) || !phase.duration_s.is_finite() {
                return Err(InvariantError::field(
                    "duration_s",
                    format!("phase {i}: duration must be positive"),
                ));
            }
            match phase.kind {
                PhaseKind::Traffic { target_mbps } if !(target_mbps > 0.0) => {
                    return Err(InvariantError::field(
                        "target_mbps",
                        format!("phase {i}: traffic target must be positive"),
                    ));
                }
                PhaseKind::Cpu { target_load } if !(0.0..=1.0).contains(&target_load) => {
                    return Err(InvariantError::field(
                        "target_load",
                        format!("phase {i}: load must lie in [0, 1]"),
                    ));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Sampling ticks in a phase: floor(1000 * duration / period).
    pub fn ticks_in_phase(&self, index: usize) -> u64 {
        let d = self.phases[index].duration_s;
        ((1000.0 * d) / self.sample_period_ms as f64).floor() as u64
    }

    pub fn per_ue_mbps(&self, index: usize) -> f64 {
        self.phases[index].kind.target_mbps() / f64::from(self.ue_count)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeterKind {
    HardwarePlug,
    SoftwareCounter,
    Simulated,
}

/// Which of the two measurement families a meter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeterFamily {
    /// Wall power of the whole machine.
    Hardware,
    /// On-chip counters: CPU package and memory only.
    Software,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeterDescriptor {
    pub meter_id: MeterId,
    pub kind: MeterKind,
    pub family: MeterFamily,
    pub covered_scope: String,
}

impl MeterDescriptor {
    pub fn hardware_plug(id: impl Into<String>) -> Self {
        Self {
            meter_id: MeterId::new(id),
            kind: MeterKind::HardwarePlug,
            family: MeterFamily::Hardware,
            covered_scope: "whole-system wall power behind the plug".to_owned(),
        }
    }

    pub fn software_counter(id: impl Into<String>) -> Self {
        Self {
            meter_id: MeterId::new(id),
            kind: MeterKind::SoftwareCounter,
            family: MeterFamily::Software,
            covered_scope: "CPU package and memory energy counters".to_owned(),
        }
    }

    pub fn simulated(id: impl Into<String>, family: MeterFamily) -> Self {
        let covered = match family {
            MeterFamily::Hardware => "simulated wall power",
            MeterFamily::Software => "simulated CPU and memory power",
        };
        Self {
            meter_id: MeterId::new(id),
            kind: MeterKind::Simulated,
            family,
            covered_scope: covered.to_owned(),
        }
    }
}

/// Any single telemetry value an agent can ship to the controller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Reading {
    Power(PowerSample),
    Throughput(ThroughputSample),
    Cpu(CpuSample),
    Attribution(AttributionRecord),
}

impl Reading {
    pub fn timestamp_ms(&self) -> TimestampMs {
        match self {
            Reading::Power(s) => s.timestamp_ms,
            Reading::Throughput(s) => s.timestamp_ms,
            Reading::Cpu(s) => s.timestamp_ms,
            Reading::Attribution(r) => r.window.1,
        }
    }

    pub fn set_timestamp_ms(&mut self, t: TimestampMs) {
        match self {
            Reading::Power(s) => s.timestamp_ms = t,
            Reading::Throughput(s) => s.timestamp_ms = t,
            Reading::Cpu(s) => s.timestamp_ms = t,
            Reading::Attribution(r) => {
                let len = r.window.1 - r.window.0;
                r.window = (t - len, t);
            }
        }
    }

    /// Identity of the stream this reading belongs to.
    pub fn stream_key(&self) -> String {
        match self {
            Reading::Power(s) => format!("power/{}/{}", s.source, s.scope),
            Reading::Throughput(s) => format!("net/{}/{}", s.interface, s.direction),
            Reading::Cpu(s) => format!("cpu/{}", s.source),
            Reading::Attribution(_) => "attribution".to_owned(),
        }
    }

    pub fn validate(&self) -> Result<(), InvariantError> {
        match self {
            Reading::Power(s) => s.validate(),
            Reading::Throughput(s) => s.validate(),
            Reading::Cpu(s) => s.validate(),
            Reading::Attribution(r) => r.validate(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum PhaseOutcome {
    Completed,
    /// The deployment could not sustain the requested rate.
    TargetUnreachable {
        achieved_mbps: f64,
    },
    Interrupted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseMark {
    pub index: usize,
    pub start_ms: TimestampMs,
    pub end_ms: TimestampMs,
    #[serde(flatten)]
    pub outcome: PhaseOutcome,
}

impl PhaseMark {
    /// Phase windows are half-open on the left: (start, end].
    pub fn contains(&self, t: TimestampMs) -> bool {
        t > self.start_ms && t <= self.end_ms
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapEvent {
    pub timestamp_ms: TimestampMs,
    pub source: String,
    pub phase: usize,
    pub tick: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flag {
    pub timestamp_ms: TimestampMs,
    pub kind: String,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Incomplete { reason: String },
}

impl RunStatus {
    pub fn is_complete(&self) -> bool {
        matches!(self, RunStatus::Complete)
    }
}

/// Everything collected during one experiment run.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRun {
    pub run_id: String,
    pub plan: ExperimentPlan,
    pub host_metadata: BTreeMap<String, String>,
    pub meters: Vec<MeterDescriptor>,
    pub status: RunStatus,
    pub start_ms: TimestampMs,
    pub end_ms: TimestampMs,
    pub power: Vec<PowerSample>,
    pub throughput: Vec<ThroughputSample>,
    pub cpu: Vec<CpuSample>,
    pub attribution: Vec<AttributionRecord>,
    pub phase_marks: Vec<PhaseMark>,
    pub gaps: Vec<GapEvent>,
    pub flags: Vec<Flag>,
}

impl TraceRun {
    pub fn new(run_id: impl Into<String>, plan: ExperimentPlan, start_ms: TimestampMs) -> Self {
        Self {
            run_id: run_id.into(),
            plan,
            host_metadata: BTreeMap::new(),
            meters: Vec::new(),
            status: RunStatus::Complete,
            start_ms,
            end_ms: start_ms,
            power: Vec::new(),
            throughput: Vec::new(),
            cpu: Vec::new(),
            attribution: Vec::new(),
            phase_marks: Vec::new(),
            gaps: Vec::new(),
            flags: Vec::new(),
        }
    }

    pub fn push(&mut self, reading: Reading) {
        match reading {
            Reading::Power(s) => self.power.push(s),
            Reading::Throughput(s) => self.throughput.push(s),
            Reading::Cpu(s) => self.cpu.push(s),
            Reading::Attribution(r) => self.attribution.push(r),
        }
    }

    pub fn meter(&self, id: &MeterId) -> Option<&MeterDescriptor> {
        self.meters.iter().find(|m| &m.meter_id == id)
    }

    /// Host-scope samples of one meter.
    pub fn host_samples<'a>(&'a self, id: &'a MeterId) -> impl Iterator<Item = &'a PowerSample> + 'a {
        self.power
            .iter()
            .filter(move |s| &s.source == id && s.scope == Scope::Host)
    }

    /// Orders every stream by timestamp with a stable tie-break, so two
    /// collections of the same readings persist byte-identically.
    pub fn canonicalize(&mut self) {
        self.power
            .sort_by(|a, b| (a.timestamp_ms, &a.source, &a.scope).cmp(&(b.timestamp_ms, &b.source, &b.scope)));
        self.throughput.sort_by(|a, b| {
            (a.timestamp_ms, &a.interface, a.direction).cmp(&(b.timestamp_ms, &b.interface, b.direction))
        });
        self.cpu
            .sort_by(|a, b| (a.timestamp_ms, &a.source).cmp(&(b.timestamp_ms, &b.source)));
        self.attribution.sort_by_key(|r| r.window);
        self.gaps
            .sort_by(|a, b| (a.timestamp_ms, &a.source, a.tick).cmp(&(b.timestamp_ms, &b.source, b.tick)));
        self.meters.sort_by(|a, b| a.meter_id.cmp(&b.meter_id));
    }

    /// Checks every structural invariant of a persisted run.
    pub fn validate(&self) -> Result<(), InvariantError> {
        self.plan.validate()?;
        if self.end_ms < self.start_ms {
            return Err(InvariantError::Structure("run ends before it starts".into()));
        }
        let in_run = |t: TimestampMs, what: &str| {
            if t < self.start_ms || t > self.end_ms {
                Err(InvariantError::Structure(format!(
                    "{what} timestamp {t} outside run [{}, {}]",
                    self.start_ms, self.end_ms
                )))
            } else {
                Ok(())
            }
        };
        let mut last: HashMap<String, TimestampMs> = HashMap::new();
        let mut check_order = |key: String, t: TimestampMs| {
            if let Some(prev) = last.insert(key.clone(), t) {
                if t <= prev {
                    return Err(InvariantError::Structure(format!(
                        "stream {key}: timestamp {t} does not increase past {prev}"
                    )));
                }
            }
            Ok(())
        };
        for s in &self.power {
            s.validate()?;
            in_run(s.timestamp_ms, "power")?;
            check_order(Reading::Power(s.clone()).stream_key(), s.timestamp_ms)?;
        }
        for s in &self.throughput {
            s.validate()?;
            in_run(s.timestamp_ms, "throughput")?;
            check_order(format!("net/{}/{}", s.interface, s.direction), s.timestamp_ms)?;
        }
        for s in &self.cpu {
            s.validate()?;
            in_run(s.timestamp_ms, "cpu")?;
            check_order(format!("cpu/{}", s.source), s.timestamp_ms)?;
        }
        for r in &self.attribution {
            r.validate()?;
            in_run(r.window.1, "attribution")?;
        }
        let mut prev_end = None;
        for (i, mark) in self.phase_marks.iter().enumerate() {
            if mark.end_ms < mark.start_ms {
                return Err(InvariantError::Structure(format!(
                    "phase mark {i} ends before it starts"
                )));
            }
            if mark.index >= self.plan.phases.len() {
                return Err(InvariantError::Structure(format!(
                    "phase mark {i} references phase {} not in plan",
                    mark.index
                )));
            }
            if let Some((prev_idx, end)) = prev_end {
                if mark.start_ms < end || mark.index <= prev_idx {
                    return Err(InvariantError::Structure(format!(
                        "phase mark {i} overlaps or precedes its predecessor"
                    )));
                }
            }
            in_run(mark.start_ms, "phase start")?;
            in_run(mark.end_ms, "phase end")?;
            prev_end = Some((mark.index, mark.end_ms));
        }
        Ok(())
    }

    /// Phase mark containing `t`, if any.
    pub fn phase_at(&self, t: TimestampMs) -> Option<&PhaseMark> {
        self.phase_marks.iter().find(|m| m.contains(t))
    }
}
