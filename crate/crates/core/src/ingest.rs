//! Conversion of externally recorded CSV measurements into trace runs.
//!
//! An adapter file maps CSV columns onto power, throughput and CPU streams.
//! Phases come from a column holding each row's target (traffic rate or CPU
//! load); consecutive rows with the same target form one phase, and a zero
//! target is an idle phase.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{
    CpuSample, Deployment, DeploymentKind, Direction, ExperimentPlan, MeterDescriptor, MeterFamily, MeterId, MeterKind,
    Phase, PhaseKind, PhaseMark, PhaseOutcome, PowerSample, RunStatus, Scope, ThroughputSample, TimestampMs, TraceRun,
};

/// Environment variable pointing at an adapter file for the published dataset.
pub const DATASET_ADAPTER_ENV: &str = "EDGEWATT_DATASET_ADAPTER";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("adapter {path}: {reason}")]
    Adapter { path: PathBuf, reason: String },
    #[error("{path}:{line}: {reason}")]
    Row { path: PathBuf, line: u64, reason: String },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("run {run_id}: {reason}")]
    Run { run_id: String, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Adapter {
    pub runs: Vec<RunMapping>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMapping {
    pub run_id: String,
    pub deployment: DeploymentKind,
    #[serde(default = "dataset")]
    pub software: String,
    #[serde(default = "period")]
    pub sample_period_ms: u64,
    pub files: Vec<FileMapping>,
}

fn dataset() -> String {
    "dataset".into()
}

fn period() -> u64 {
    1000
}

fn one() -> f64 {
    1.0
}

fn comma() -> char {
    ','
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    S,
    Ms,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseTargetKind {
    TargetMbps,
    TargetLoad,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileMapping {
    /// Relative to the adapter file.
    pub path: PathBuf,
    #[serde(default = "comma")]
    pub delimiter: char,
    pub timestamp: String,
    pub time_unit: TimeUnit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<PhaseColumn>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub power: Vec<PowerColumn>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub throughput: Vec<ThroughputColumn>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cpu: Vec<CpuColumn>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseColumn {
    pub column: String,
    pub kind: PhaseTargetKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerColumn {
    pub column: String,
    pub meter: String,
    pub family: MeterFamily,
    /// Multiplier to mW, e.g. 1000 for a column in W.
    #[serde(default = "one")]
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThroughputColumn {
    pub column: String,
    pub interface: String,
    pub direction: Direction,
    /// Multiplier to bits per second, e.g. 1e6 for a column in Mbps.
    #[serde(default = "one")]
    pub scale: f64,
    /// Packets per second column. Without one the packet rate is estimated
    /// from `packet_bytes`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub packets_column: Option<String>,
    #[serde(default = "packet_bytes")]
    pub packet_bytes: f64,
}

fn packet_bytes() -> f64 {
    1500.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpuColumn {
    pub column: String,
    pub source: String,
    /// Multiplier to a [0, 1] fraction, e.g. 0.01 for percent.
    #[serde(default = "one")]
    pub scale: f64,
}

pub fn load_adapter(path: &Path) -> Result<Adapter, IngestError> {
    let bad = |reason: String| IngestError::Adapter {
        path: path.to_owned(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let mut adapter: Adapter = toml::from_str(&text).map_err(|e| bad(e.message().to_owned()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for run in &mut adapter.runs {
        for f in &mut run.files {
            if f.path.is_relative() {
                f.path = base.join(&f.path);
            }
        }
    }
    Ok(adapter)
}

/// Reads every run an adapter file describes.
pub fn ingest(adapter_path: &Path) -> Result<Vec<TraceRun>, IngestError> {
    load_adapter(adapter_path)?.runs.iter().map(ingest_run).collect()
}

struct Columns<'a> {
    file: &'a FileMapping,
    timestamp: usize,
    phase: Option<usize>,
    power: Vec<usize>,
    throughput: Vec<(usize, Option<usize>)>,
    cpu: Vec<usize>,
}

fn locate<'a>(file: &'a FileMapping, headers: &csv::StringRecord) -> Result<Columns<'a>, IngestError> {
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| IngestError::Row {
                path: file.path.clone(),
                line: 1,
                reason: format!("no column named `{name}`"),
            })
    };
    Ok(Columns {
        file,
        timestamp: find(&file.timestamp)?,
        phase: file.phase.as_ref().map(|p| find(&p.column)).transpose()?,
        power: file.power.iter().map(|c| find(&c.column)).collect::<Result<_, _>>()?,
        throughput: file
            .throughput
            .iter()
            .map(|c| Ok((find(&c.column)?, c.packets_column.as_deref().map(find).transpose()?)))
            .collect::<Result<_, IngestError>>()?,
        cpu: file.cpu.iter().map(|c| find(&c.column)).collect::<Result<_, _>>()?,
    })
}

pub fn ingest_run(mapping: &RunMapping) -> Result<TraceRun, IngestError> {
    let mut run = TraceRun::new(
        mapping.run_id.clone(),
        ExperimentPlan {
            plan_id: mapping.run_id.clone(),
            deployment: Deployment {
                kind: mapping.deployment,
                software: mapping.software.clone(),
            },
            phases: Vec::new(),
            sample_period_ms: mapping.sample_period_ms,
            ue_count: 1,
            sim_profile: None,
        },
        0,
    );
    let mut targets: Vec<(TimestampMs, PhaseTargetKind, f64)> = Vec::new();
    let mut meters: BTreeMap<String, MeterFamily> = BTreeMap::new();

    for file in &mapping.files {
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(u8::try_from(file.delimiter).map_err(|_| IngestError::Adapter {
                path: file.path.clone(),
                reason: "delimiter must be a single ASCII character".into(),
            })?)
            .trim(csv::Trim::All)
            .from_path(&file.path)
            .map_err(|source| IngestError::Csv {
                path: file.path.clone(),
                source,
            })?;
        let headers = reader.headers().map_err(|source| IngestError::Csv {
            path: file.path.clone(),
            source,
        })?;
        let cols = locate(file, &headers.clone())?;
        for c in &file.power {
            meters.insert(c.meter.clone(), c.family);
        }
        for record in reader.records() {
            let record = record.map_err(|source| IngestError::Csv {
                path: file.path.clone(),
                source,
            })?;
            let line = record.position().map_or(0, |p| p.line());
            read_row(&cols, &record, line, &mut run, &mut targets)?;
        }
    }

    run.meters = meters
        .into_iter()
        .map(|(id, family)| MeterDescriptor {
            meter_id: MeterId::new(id),
            kind: match family {
                MeterFamily::Hardware => MeterKind::HardwarePlug,
                MeterFamily::Software => MeterKind::SoftwareCounter,
            },
            family,
            covered_scope: "imported from dataset".into(),
        })
        .collect();
    let times = run
        .power
        .iter()
        .map(|s| s.timestamp_ms)
        .chain(run.throughput.iter().map(|s| s.timestamp_ms))
        .chain(run.cpu.iter().map(|s| s.timestamp_ms));
    let (lo, hi) = times.fold((i64::MAX, i64::MIN), |(lo, hi), t| (lo.min(t), hi.max(t)));
    if lo > hi {
        return Err(IngestError::Run {
            run_id: mapping.run_id.clone(),
            reason: "no samples".into(),
        });
    }
    // phase windows are (start, end], so the run opens just before the first sample
    run.start_ms = lo - 1;
    run.end_ms = hi;
    build_phases(&mut run, targets, lo - 1, hi);
    run.status = RunStatus::Complete;
    run.canonicalize();
    run.validate().map_err(|e| IngestError::Run {
        run_id: mapping.run_id.clone(),
        reason: e.to_string(),
    })?;
    Ok(run)
}

fn read_row(
    cols: &Columns<'_>,
    record: &csv::StringRecord,
    line: u64,
    run: &mut TraceRun,
    targets: &mut Vec<(TimestampMs, PhaseTargetKind, f64)>,
) -> Result<(), IngestError> {
    let file = cols.file;
    let err = |reason: String| IngestError::Row {
        path: file.path.clone(),
        line,
        reason,
    };
    // empty cells are missing samples, not errors
    let cell = |i: usize, name: &str| -> Result<Option<f64>, IngestError> {
        let raw = record.get(i).unwrap_or("");
        if raw.is_empty() || raw.eq_ignore_ascii_case("nan") {
            return Ok(None);
        }
        raw.parse::<f64>()
            .map(Some)
            .map_err(|_| err(format!("column `{name}`: `{raw}` is not a number")))
    };
    let Some(t) = cell(cols.timestamp, &file.timestamp)? else {
        return Err(err("missing timestamp".into()));
    };
    let t = match file.time_unit {
        TimeUnit::S => (t * 1000.0).round() as TimestampMs,
        TimeUnit::Ms => t.round() as TimestampMs,
    };
    if let (Some(i), Some(p)) = (cols.phase, &file.phase) {
        if let Some(v) = cell(i, &p.column)? {
            targets.push((t, p.kind, v));
        }
    }
    for (c, &i) in file.power.iter().zip(&cols.power) {
        if let Some(v) = cell(i, &c.column)? {
            let s = PowerSample::new(t, MeterId::new(&c.meter), Scope::Host, v * c.scale);
            s.validate().map_err(|e| err(e.to_string()))?;
            run.power.push(s);
        }
    }
    for (c, &(i, pi)) in file.throughput.iter().zip(&cols.throughput) {
        if let Some(v) = cell(i, &c.column)? {
            let bps = v * c.scale;
            let pps = match (pi, &c.packets_column) {
                (Some(pi), Some(name)) => cell(pi, name)?.unwrap_or(0.0),
                _ => bps / (8.0 * c.packet_bytes.max(1.0)),
            };
            let s = ThroughputSample {
                timestamp_ms: t,
                interface: c.interface.clone(),
                direction: c.direction,
                bits_per_second: bps,
                packets_per_second: pps,
            };
            s.validate().map_err(|e| err(e.to_string()))?;
            run.throughput.push(s);
        }
    }
    for (c, &i) in file.cpu.iter().zip(&cols.cpu) {
        if let Some(v) = cell(i, &c.column)? {
            let s = CpuSample {
                timestamp_ms: t,
                source: MeterId::new(&c.source),
                utilization: v * c.scale,
                per_core: None,
            };
            s.validate().map_err(|e| err(e.to_string()))?;
            run.cpu.push(s);
        }
    }
    Ok(())
}

/// Splits the run into phases at every change of target. Without a phase
/// column the whole run is one idle phase.
fn build_phases(
    run: &mut TraceRun,
    mut targets: Vec<(TimestampMs, PhaseTargetKind, f64)>,
    start: TimestampMs,
    end: TimestampMs,
) {
    targets.sort_by_key(|t| t.0);
    let kind_of = |k: PhaseTargetKind, v: f64| match k {
        _ if v == 0.0 => PhaseKind::Idle,
        PhaseTargetKind::TargetMbps => PhaseKind::Traffic { target_mbps: v },
        PhaseTargetKind::TargetLoad => PhaseKind::Cpu { target_load: v },
    };
    let mut segments: Vec<(PhaseKind, TimestampMs)> = Vec::new();
    for (t, k, v) in targets {
        let kind = kind_of(k, v);
        match segments.last_mut() {
            Some((last, until)) if *last == kind => *until = t,
            _ => segments.push((kind, t)),
        }
    }
    if segments.is_empty() {
        segments.push((PhaseKind::Idle, end));
    }
    let n = segments.len();
    let mut from = start;
    for (i, (kind, last)) in segments.into_iter().enumerate() {
        let to = if i + 1 == n { end } else { last };
        run.plan.phases.push(Phase {
            kind,
            duration_s: ((to - from).max(1)) as f64 / 1000.0,
        });
        run.phase_marks.push(PhaseMark {
            index: i,
            start_ms: from,
            end_ms: to,
            outcome: PhaseOutcome::Completed,
        });
        from = to;
    }
}
