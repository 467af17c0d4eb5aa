use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CollectorError;
use crate::clock::Clock;
use crate::meters::{SampleError, Sampler};
use crate::telemetry::{Direction, Reading, ThroughputSample, TimestampMs};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CounterWidth {
    #[serde(rename = "32")]
    Bits32,
    #[default]
    #[serde(rename = "64")]
    Bits64,
}

impl CounterWidth {
    pub fn bits(self) -> u32 {
        match self {
            CounterWidth::Bits32 => 32,
            CounterWidth::Bits64 => 64,
        }
    }
}

/// Increase of a free-running counter of the given width, assuming at most
/// one wrap between the readings.
pub fn wrap_delta(prev: u64, curr: u64, width: CounterWidth) -> u64 {
    let d = curr.wrapping_sub(prev);
    match width {
        CounterWidth::Bits32 => d & 0xffff_ffff,
        CounterWidth::Bits64 => d,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterfaceCounters {
    pub timestamp_ms: TimestampMs,
    pub interface: String,
    pub rx_bytes: u64,
    pub tx_bytes: u64,
    pub rx_packets: u64,
    pub tx_packets: u64,
}

/// Rx and Tx rates between two snapshots of the same interface.
pub fn throughput_from_counters(
    prev: &InterfaceCounters,
    curr: &InterfaceCounters,
    width: CounterWidth,
) -> Result<[ThroughputSample; 2], CollectorError> {
    if prev.interface != curr.interface {
        return Err(CollectorError::Mismatch(format!(
            "interface `{}` vs `{}`",
            prev.interface, curr.interface
        )));
    }
    let dt = curr.timestamp_ms - prev.timestamp_ms;
    if dt <= 0 {
        return Err(CollectorError::InvalidInterval(dt));
    }
    let secs = dt as f64 / 1000.0;
    let rate = |direction, pb: u64, cb: u64, pp: u64, cp: u64| {
        let bytes = wrap_delta(pb, cb, width);
        let packets = wrap_delta(pp, cp, width);
        if packets == 0 && bytes > 0 {
            return Err(CollectorError::Implausible {
                interface: curr.interface.clone(),
                detail: format!("{bytes} {direction} bytes without any packet"),
            });
        }
        Ok(ThroughputSample {
            timestamp_ms: curr.timestamp_ms,
            interface: curr.interface.clone(),
            direction,
            bits_per_second: 8.0 * bytes as f64 / secs,
            packets_per_second: packets as f64 / secs,
        })
    };
    Ok([
        rate(
            Direction::Rx,
            prev.rx_bytes,
            curr.rx_bytes,
            prev.rx_packets,
            curr.rx_packets,
        )?,
        rate(
            Direction::Tx,
            prev.tx_bytes,
            curr.tx_bytes,
            prev.tx_packets,
            curr.tx_packets,
        )?,
    ])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfaceSpec {
    pub name: String,
    #[serde(default)]
    pub width: CounterWidth,
}

impl InterfaceSpec {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            width: CounterWidth::Bits64,
        }
    }
}

fn read_counter(path: &Path) -> Result<u64, CollectorError> {
    let text = fs::read_to_string(path)?;
    text.trim().parse().map_err(|_| CollectorError::Parse {
        path: path.display().to_string(),
        reason: format!("not an integer: {:?}", text.trim()),
    })
}

/// Reads `<root>/<iface>/statistics/{rx,tx}_{bytes,packets}`.
pub fn read_interface(root: &Path, name: &str, now: TimestampMs) -> Result<InterfaceCounters, CollectorError> {
    let stats = root.join(name).join("statistics");
    Ok(InterfaceCounters {
        timestamp_ms: now,
        interface: name.to_owned(),
        rx_bytes: read_counter(&stats.join("rx_bytes"))?,
        tx_bytes: read_counter(&stats.join("tx_bytes"))?,
        rx_packets: read_counter(&stats.join("rx_packets"))?,
        tx_packets: read_counter(&stats.join("tx_packets"))?,
    })
}

pub struct NetSampler {
    root: PathBuf,
    interfaces: Vec<InterfaceSpec>,
    prev: Vec<Option<InterfaceCounters>>,
}

impl NetSampler {
    pub fn new(root: impl Into<PathBuf>, interfaces: Vec<InterfaceSpec>) -> Self {
        let prev = vec![None; interfaces.len()];
        Self {
            root: root.into(),
            interfaces,
            prev,
        }
    }

    pub fn sysfs(interfaces: Vec<InterfaceSpec>) -> Self {
        Self::new("/sys/class/net", interfaces)
    }
}

impl Sampler for NetSampler {
    fn name(&self) -> &str {
        "net"
    }

    fn prime(&mut self, clock: &dyn Clock) -> Result<(), SampleError> {
        let now = clock.now_ms();
        for (i, spec) in self.interfaces.iter().enumerate() {
            self.prev[i] = Some(read_interface(&self.root, &spec.name, now)?);
        }
        Ok(())
    }

    fn sample(&mut self, clock: &dyn Clock) -> Result<Vec<Reading>, SampleError> {
        let now = clock.now_ms();
        let mut out = Vec::new();
        let mut failure = None;
        for (i, spec) in self.interfaces.iter().enumerate() {
            let curr = read_interface(&self.root, &spec.name, now)?;
            if let Some(prev) = self.prev[i].replace(curr.clone()) {
                match throughput_from_counters(&prev, &curr, spec.width) {
                    Ok(pair) => out.extend(pair.into_iter().map(Reading::Throughput)),
                    Err(e) => failure = Some(e),
                }
            } else {
                failure = Some(CollectorError::Mismatch(format!("{} not primed", spec.name)));
            }
        }
        match failure {
            Some(e) => Err(e.into()),
            None => Ok(out),
        }
    }
}
