//! Per-process split of host software-metered power.
//!
//! The host reading is divided into a static part (the idle floor measured
//! during the idle baseline) and a dynamic part. The dynamic part is shared
//! out in proportion to the CPU time each process consumed in the window.
//! Power spent in kernel context is not visible here and stays in the
//! residual.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{InvariantError, TimestampMs};

/// Allowed mismatch between the attributed total and the host reading.
pub const CONSERVATION_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum AttributionError {
    #[error("host power must be finite and non-negative, got {0}")]
    HostPower(f64),
    #[error("idle floor must be finite and non-negative, got {0}")]
    IdleFloor(f64),
    #[error("process {pid}: invalid cpu time delta {delta}")]
    Delta { pid: u32, delta: f64 },
    #[error("process {pid}: window {found:?} differs from {expected:?}")]
    Window {
        pid: u32,
        found: (TimestampMs, TimestampMs),
        expected: (TimestampMs, TimestampMs),
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessCpuDelta {
    pub pid: u32,
    pub command: String,
    /// CPU milliseconds consumed during the window, summed over cores.
    pub cpu_time_delta: f64,
    pub window: (TimestampMs, TimestampMs),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionEntry {
    pub pid: u32,
    pub command: String,
    pub power_mw: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub window: (TimestampMs, TimestampMs),
    pub host_power_mw: f64,
    pub entries: Vec<AttributionEntry>,
    pub residual_static_mw: f64,
    /// Set when the host reading fell below the idle floor.
    #[serde(default)]
    pub anomalous: bool,
}

impl AttributionRecord {
    pub fn attributed_mw(&self) -> f64 {
        self.entries.iter().map(|e| e.power_mw).sum()
    }

    pub fn validate(&self) -> Result<(), InvariantError> {
        if self.entries.iter().any(|e| !(e.power_mw >= 0.0)) || !(self.residual_static_mw >= 0.0) {
            return Err(InvariantError::Field {
                field: "power_mw",
                reason: "attributed power must be non-negative".into(),
            });
        }
        let total = self.attributed_mw() + self.residual_static_mw;
        let scale = self.host_power_mw.abs().max(1e-9);
        if (total - self.host_power_mw).abs() > CONSERVATION_TOLERANCE * scale {
            return Err(InvariantError::Field {
                field: "residual_static_mw",
                reason: format!(
                    "attributed {total} mW does not add up to host {} mW",
                    self.host_power_mw
                ),
            });
        }
        Ok(())
    }
}

/// Splits `host_power_mw` across processes by CPU time.
pub fn attribute(
    host_power_mw: f64,
    idle_floor_mw: f64,
    deltas: &[ProcessCpuDelta],
) -> Result<AttributionRecord, AttributionError> {
    if !host_power_mw.is_finite() || host_power_mw < 0.0 {
        return Err(AttributionError::HostPower(host_power_mw));
    }
    if !idle_floor_mw.is_finite() || idle_floor_mw < 0.0 {
        return Err(AttributionError::IdleFloor(idle_floor_mw));
    }
    let window = deltas.first().map(|d| d.window).unwrap_or((0, 0));
    for d in deltas {
        if !d.cpu_time_delta.is_finite() || d.cpu_time_delta < 0.0 {
            return Err(AttributionError::Delta {
                pid: d.pid,
                delta: d.cpu_time_delta,
            });
        }
        if d.window != window {
            return Err(AttributionError::Window {
                pid: d.pid,
                found: d.window,
                expected: window,
            });
        }
    }

    let anomalous = idle_floor_mw > host_power_mw;
    let floor = idle_floor_mw.min(host_power_mw);
    let dynamic = host_power_mw - floor;
    let total_cpu: f64 = deltas.iter().map(|d| d.cpu_time_delta).sum();

    if total_cpu == 0.0 {
        return Ok(AttributionRecord {
            window,
            host_power_mw,
            entries: Vec::new(),
            residual_static_mw: host_power_mw,
            anomalous,
        });
    }

    // share_i = dynamic / (1 + others_i / own_i): every step is monotone in
    // own_i under correct rounding, so a larger delta never gets less power.
    let entries = deltas
        .iter()
        .enumerate()
        .filter(|(_, d)| d.cpu_time_delta > 0.0)
        .map(|(i, d)| {
            let others: f64 = deltas
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, o)| o.cpu_time_delta)
                .sum();
            AttributionEntry {
                pid: d.pid,
                command: d.command.clone(),
                power_mw: dynamic / (1.0 + others / d.cpu_time_delta),
            }
        })
        .collect();

    Ok(AttributionRecord {
        window,
        host_power_mw,
        entries,
        residual_static_mw: floor,
        anomalous,
    })
}

/// Literal command matcher: exact name, or prefix when written `prefix*`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupRule {
    pub pattern: String,
    pub group: String,
}

impl GroupRule {
    pub fn new(pattern: impl Into<String>, group: impl Into<String>) -> Self {
        Self {
            pattern: pattern.into(),
            group: group.into(),
        }
    }

    pub fn matches(&self, command: &str) -> bool {
        match self.pattern.strip_suffix('*') {
            Some(prefix) => command.starts_with(prefix),
            None => command == self.pattern,
        }
    }
}

pub const OTHER_GROUP: &str = "other";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupedAttribution {
    pub window: (TimestampMs, TimestampMs),
    pub host_power_mw: f64,
    /// Groups in first-appearance rule order, `other` last.
    pub groups: Vec<(String, f64)>,
    pub residual_static_mw: f64,
    pub anomalous: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl GroupedAttribution {
    pub fn get(&self, group: &str) -> Option<f64> {
        self.groups.iter().find(|(g, _)| g == group).map(|(_, p)| *p)
    }

    pub fn total_mw(&self) -> f64 {
        self.groups.iter().map(|(_, p)| p).sum::<f64>() + self.residual_static_mw
    }
}

/// Merges entries by rule. The first matching rule wins; an entry matched by
/// several rules produces a warning.
pub fn group(record: &AttributionRecord, rules: &[GroupRule]) -> GroupedAttribution {
    let mut groups: Vec<(String, f64)> = Vec::new();
    let mut add = |name: &str, p: f64| match groups.iter_mut().find(|(g, _)| g == name) {
        Some((_, acc)) => *acc += p,
        None => groups.push((name.to_owned(), p)),
    };
    let mut other = None::<f64>;
    let mut warnings = Vec::new();

    for entry in &record.entries {
        let mut hits = rules.iter().filter(|r| r.matches(&entry.command));
        match hits.next() {
            Some(first) => {
                let extra: Vec<&str> = hits.map(|r| r.pattern.as_str()).collect();
                if !extra.is_empty() {
                    warnings.push(format!(
                        "`{}` matches `{}` and also {:?}; using `{}`",
                        entry.command, first.pattern, extra, first.group
                    ));
                }
                add(&first.group, entry.power_mw);
            }
            None => *other.get_or_insert(0.0) += entry.power_mw,
        }
    }
    if rules.is_empty() && other.is_none() {
        other = Some(0.0);
    }
    if let Some(p) = other {
        add(OTHER_GROUP, p);
    }
    GroupedAttribution {
        window: record.window,
        host_power_mw: record.host_power_mw,
        groups,
        residual_static_mw: record.residual_static_mw,
        anomalous: record.anomalous,
        warnings,
    }
}
