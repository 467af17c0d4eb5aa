use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use super::CollectorError;
use crate::attribution::{attribute, ProcessCpuDelta};
use crate::clock::Clock;
use crate::meters::{SampleError, Sampler};
use crate::telemetry::{MeterDescriptor, Reading, Scope, TimestampMs};

pub fn clock_ticks_per_second() -> u64 {
    // SAFETY: sysconf has no preconditions.
    let v = unsafe { libc::sysconf(libc::_SC_CLK_TCK) };
    if v > 0 {
        v as u64
    } else {
        100
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProcessTimes {
    pub pid: u32,
    pub command: String,
    /// utime + stime, in clock ticks.
    pub cpu_ticks: u64,
}

/// Parses one `/proc/<pid>/stat` line. The command may itself contain spaces
/// and parentheses, so fields are counted from the last `)`.
pub fn parse_pid_stat(text: &str) -> Result<ProcessTimes, CollectorError> {
    let bad = |reason: &str| CollectorError::Parse {
        path: "pid stat".into(),
        reason: reason.to_owned(),
    };
    let open = text.find('(').ok_or_else(|| bad("missing command"))?;
    let close = text.rfind(')').ok_or_else(|| bad("missing command"))?;
    let pid = text[..open].trim().parse().map_err(|_| bad("bad pid"))?;
    let command = text[open + 1..close].to_owned();
    let rest: Vec<&str> = text[close + 1..].split_whitespace().collect();
    // rest[0] is the state (field 3); utime and stime are fields 14 and 15
    let field = |n: usize| -> Result<u64, CollectorError> {
        rest.get(n - 3)
            .ok_or_else(|| bad("too few fields"))?
            .parse()
            .map_err(|_| bad("non-numeric time field"))
    };
    Ok(ProcessTimes {
        pid,
        command,
        cpu_ticks: field(14)? + field(15)?,
    })
}

/// Tracks per-process CPU time between scans of `<root>/<pid>/stat`.
pub struct ProcessScanner {
    root: PathBuf,
    ticks_per_s: u64,
    prev: BTreeMap<u32, ProcessTimes>,
    prev_at: Option<TimestampMs>,
}

impl ProcessScanner {
    pub fn new(proc_root: impl Into<PathBuf>) -> Self {
        Self {
            root: proc_root.into(),
            ticks_per_s: clock_ticks_per_second(),
            prev: BTreeMap::new(),
            prev_at: None,
        }
    }

    pub fn with_ticks_per_second(mut self, hz: u64) -> Self {
        self.ticks_per_s = hz.max(1);
        self
    }

    fn snapshot(&self) -> Result<BTreeMap<u32, ProcessTimes>, CollectorError> {
        let mut out = BTreeMap::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            let Some(pid) = entry.file_name().to_str().and_then(|s| s.parse::<u32>().ok()) else {
                continue;
            };
            // processes can exit between listing and reading
            let Ok(text) = fs::read_to_string(entry.path().join("stat")) else {
                continue;
            };
            let times = parse_pid_stat(&text)?;
            out.insert(pid, times);
        }
        Ok(out)
    }

    /// CPU time per process since the previous scan, in ms. The first call
    /// only primes and returns nothing. Processes that are new in this window
    /// count from zero; a pid reused by another command restarts.
    pub fn scan(&mut self, now: TimestampMs) -> Result<Vec<ProcessCpuDelta>, CollectorError> {
        let snap = self.snapshot()?;
        let mut out = Vec::new();
        if let Some(start) = self.prev_at {
            if now <= start {
                return Err(CollectorError::InvalidInterval(now - start));
            }
            for (pid, t) in &snap {
                let before = match self.prev.get(pid) {
                    Some(p) if p.command == t.command && p.cpu_ticks <= t.cpu_ticks => p.cpu_ticks,
                    _ => 0,
                };
                let delta = t.cpu_ticks - before;
                if delta > 0 {
                    out.push(ProcessCpuDelta {
                        pid: *pid,
                        command: t.command.clone(),
                        cpu_time_delta: delta as f64 * 1000.0 / self.ticks_per_s as f64,
                        window: (start, now),
                    });
                }
            }
        }
        self.prev = snap;
        self.prev_at = Some(now);
        Ok(out)
    }
}

/// Wraps a software power meter and splits each host reading across the
/// processes that used CPU since the previous tick.
pub struct ProcessAttributionSampler {
    meter: Box<dyn Sampler>,
    scanner: ProcessScanner,
    idle_floor_mw: f64,
}

impl ProcessAttributionSampler {
    pub fn new(meter: Box<dyn Sampler>, scanner: ProcessScanner, idle_floor_mw: f64) -> Self {
        Self {
            meter,
            scanner,
            idle_floor_mw,
        }
    }
}

impl Sampler for ProcessAttributionSampler {
    fn name(&self) -> &str {
        self.meter.name()
    }

    fn descriptors(&self) -> Vec<MeterDescriptor> {
        self.meter.descriptors()
    }

    fn prime(&mut self, clock: &dyn Clock) -> Result<(), SampleError> {
        self.meter.prime(clock)?;
        self.scanner.scan(clock.now_ms())?;
        Ok(())
    }

    fn sample(&mut self, clock: &dyn Clock) -> Result<Vec<Reading>, SampleError> {
        let mut readings = self.meter.sample(clock)?;
        let host = readings.iter().find_map(|r| match r {
            Reading::Power(p) if p.scope == Scope::Host => Some(p.power_mw),
            _ => None,
        });
        match (host, self.scanner.scan(clock.now_ms())) {
            (Some(host), Ok(deltas)) if !deltas.is_empty() => match attribute(host, self.idle_floor_mw, &deltas) {
                Ok(record) => readings.push(Reading::Attribution(record)),
                Err(e) => log::warn!("{}: attribution skipped: {e}", self.meter.name()),
            },
            (_, Err(e)) => log::warn!("{}: process scan failed: {e}", self.meter.name()),
            _ => {}
        }
        Ok(readings)
    }
}
