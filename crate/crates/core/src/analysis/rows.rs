use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::telemetry::{align, Direction, MeterFamily, Scope, Stream, TimestampMs, TraceRun};

/// Which streams of a trace play the hardware, software, throughput and CPU
/// roles. Unset fields pick the first matching stream in the trace.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeterSelection {
    pub hardware: Option<String>,
    pub software: Option<String>,
    pub interface: Option<String>,
    pub direction: Option<Direction>,
    pub cpu: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisOptions {
    /// Whether idle phases contribute to the offset fit.
    #[serde(default = "yes")]
    pub include_idle: bool,
    #[serde(default)]
    pub meters: MeterSelection,
}

fn yes() -> bool {
    true
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            include_idle: true,
            meters: MeterSelection::default(),
        }
    }
}

/// One aligned tick inside a phase. `None` marks a gap in that stream.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerRow {
    pub tick_ms: TimestampMs,
    pub phase: usize,
    pub hw_mw: Option<f64>,
    pub sw_mw: Option<f64>,
    pub throughput_mbps: Option<f64>,
    pub cpu: Option<f64>,
}

fn pick_meter(run: &TraceRun, wanted: &Option<String>, family: MeterFamily) -> Option<String> {
    match wanted {
        Some(id) => Some(id.clone()),
        None => run
            .meters
            .iter()
            .find(|m| m.family == family)
            .map(|m| m.meter_id.as_str().to_owned()),
    }
}

/// Aligns the selected streams and keeps the rows that fall inside a phase.
pub fn power_rows(run: &TraceRun, selection: &MeterSelection) -> Result<Vec<PowerRow>, AnalysisError> {
    let hw = pick_meter(run, &selection.hardware, MeterFamily::Hardware);
    let sw = pick_meter(run, &selection.software, MeterFamily::Software);
    let direction = selection.direction.unwrap_or(Direction::Rx);
    let interface = selection.interface.clone().or_else(|| {
        run.throughput
            .iter()
            .filter(|s| s.direction == direction)
            .map(|s| s.interface.clone())
            .min()
    });
    let cpu = selection
        .cpu
        .clone()
        .or_else(|| run.cpu.iter().map(|s| s.source.as_str().to_owned()).min());

    let host = |id: &Option<String>| -> Vec<(TimestampMs, f64)> {
        id.as_ref().map_or_else(Vec::new, |id| {
            run.power
                .iter()
                .filter(|s| s.source.as_str() == id && s.scope == Scope::Host)
                .map(|s| (s.timestamp_ms, s.power_mw))
                .collect()
        })
    };
    let streams = vec![
        Stream::new("hw", host(&hw)),
        Stream::new("sw", host(&sw)),
        Stream::new(
            "net",
            run.throughput
                .iter()
                .filter(|s| Some(&s.interface) == interface.as_ref() && s.direction == direction)
                .map(|s| (s.timestamp_ms, s.mbps()))
                .collect(),
        ),
        Stream::new(
            "cpu",
            run.cpu
                .iter()
                .filter(|s| Some(s.source.as_str()) == cpu.as_deref())
                .map(|s| (s.timestamp_ms, s.utilization))
                .collect(),
        ),
    ];
    if streams.iter().all(|s| s.points.is_empty()) {
        return Err(AnalysisError::MissingStream("power, throughput or CPU samples".into()));
    }
    let aligned = align(&streams, run.plan.sample_period_ms)?;
    Ok(aligned
        .into_iter()
        .filter_map(|row| {
            let phase = run.phase_at(row.tick_ms)?.index;
            Some(PowerRow {
                tick_ms: row.tick_ms,
                phase,
                hw_mw: row.values[0],
                sw_mw: row.values[1],
                throughput_mbps: row.values[2],
                cpu: row.values[3],
            })
        })
        .collect())
}
