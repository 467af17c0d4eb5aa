use std::fs;
use std::path::PathBuf;

use super::CollectorError;
use crate::clock::Clock;
use crate::meters::{SampleError, Sampler};
use crate::telemetry::{CpuSample, MeterId, Reading, TimestampMs};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CoreTicks {
    pub busy: u64,
    pub total: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CpuTicks {
    pub timestamp_ms: TimestampMs,
    pub cores: Vec<CoreTicks>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CpuUtilization {
    pub sample: CpuSample,
    /// Some core reported more busy than elapsed ticks and was clamped.
    pub clamped: bool,
}

pub fn cpu_utilization(source: &MeterId, prev: &CpuTicks, curr: &CpuTicks) -> Result<CpuUtilization, CollectorError> {
    if prev.cores.len() != curr.cores.len() || curr.cores.is_empty() {
        return Err(CollectorError::Mismatch(format!(
            "{} cores vs {}",
            prev.cores.len(),
            curr.cores.len()
        )));
    }
    let mut clamped = false;
    let mut per_core = Vec::with_capacity(curr.cores.len());
    for (core, (p, c)) in prev.cores.iter().zip(&curr.cores).enumerate() {
        if c.total < p.total || c.busy < p.busy {
            return Err(CollectorError::Mismatch(format!(
                "core {core} tick counters went backwards"
            )));
        }
        let total = c.total - p.total;
        if total == 0 {
            return Err(CollectorError::NoElapsedTicks { core });
        }
        let busy = c.busy - p.busy;
        if busy > total {
            clamped = true;
        }
        per_core.push((busy as f64 / total as f64).min(1.0));
    }
    let utilization = per_core.iter().sum::<f64>() / per_core.len() as f64;
    Ok(CpuUtilization {
        sample: CpuSample {
            timestamp_ms: curr.timestamp_ms,
            source: source.clone(),
            utilization,
            per_core: Some(per_core),
        },
        clamped,
    })
}

/// Per-core counters from `/proc/stat` text. Busy time excludes idle and
/// iowait. Falls back to the aggregate line when no per-core lines exist.
pub fn parse_proc_stat(text: &str, now: TimestampMs) -> Result<CpuTicks, CollectorError> {
    let mut aggregate = None;
    let mut cores = Vec::new();
    for line in text.lines() {
        let mut fields = line.split_whitespace();
        let Some(label) = fields.next() else { continue };
        if !label.starts_with("cpu") {
            continue;
        }
        let values: Vec<u64> = fields
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| CollectorError::Parse {
                path: "stat".into(),
                reason: format!("bad line {line:?}"),
            })?;
        if values.len() < 4 {
            return Err(CollectorError::Parse {
                path: "stat".into(),
                reason: format!("too few fields in {line:?}"),
            });
        }
        // guest time is already folded into user/nice
        let total: u64 = values.iter().take(8).sum();
        let idle = values[3] + values.get(4).copied().unwrap_or(0);
        let ticks = CoreTicks {
            busy: total - idle,
            total,
        };
        if label == "cpu" {
            aggregate = Some(ticks);
        } else {
            cores.push(ticks);
        }
    }
    if cores.is_empty() {
        cores.extend(aggregate);
    }
    if cores.is_empty() {
        return Err(CollectorError::Parse {
            path: "stat".into(),
            reason: "no cpu lines".into(),
        });
    }
    Ok(CpuTicks {
        timestamp_ms: now,
        cores,
    })
}

/// Host CPU utilization from `<root>/stat`.
pub struct ProcStatSampler {
    source: MeterId,
    path: PathBuf,
    prev: Option<CpuTicks>,
    clamp_count: u64,
}

impl ProcStatSampler {
    pub fn new(source: impl Into<String>, proc_root: impl Into<PathBuf>) -> Self {
        Self {
            source: MeterId::new(source),
            path: proc_root.into().join("stat"),
            prev: None,
            clamp_count: 0,
        }
    }

    /// Intervals where jitter pushed a core above 100% busy.
    pub fn clamp_count(&self) -> u64 {
        self.clamp_count
    }

    fn read(&self, now: TimestampMs) -> Result<CpuTicks, CollectorError> {
        let text = fs::read_to_string(&self.path)?;
        parse_proc_stat(&text, now)
    }
}

impl Sampler for ProcStatSampler {
    fn name(&self) -> &str {
        self.source.as_str()
    }

    fn prime(&mut self, clock: &dyn Clock) -> Result<(), SampleError> {
        self.prev = Some(self.read(clock.now_ms())?);
        Ok(())
    }

    fn sample(&mut self, clock: &dyn Clock) -> Result<Vec<Reading>, SampleError> {
        let curr = self.read(clock.now_ms())?;
        let Some(prev) = self.prev.replace(curr.clone()) else {
            return Err(SampleError("cpu counters primed; no interval yet".into()));
        };
        let u = cpu_utilization(&self.source, &prev, &curr)?;
        if u.clamped {
            self.clamp_count += 1;
            log::debug!("{}: busy ticks exceeded elapsed ticks, clamped", self.source);
        }
        Ok(vec![Reading::Cpu(u.sample)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ticks(cores: &[(u64, u64)]) -> CpuTicks {
        CpuTicks {
            timestamp_ms: 0,
            cores: cores.iter().map(|&(busy, total)| CoreTicks { busy, total }).collect(),
        }
    }

    fn util(prev: &[(u64, u64)], curr: &[(u64, u64)]) -> Result<CpuUtilization, CollectorError> {
        let mut c = ticks(curr);
        c.timestamp_ms = 1000;
        cpu_utilization(&"cpu".into(), &ticks(prev), &c)
    }

    #[test]
    fn fully_busy() {
        let u = util(&[(0, 0), (0, 0)], &[(100, 100), (100, 100)]).unwrap();
        assert_eq!(u.sample.utilization, 1.0);
        assert!(!u.clamped);
    }

    #[test]
    fn host_is_mean_of_cores() {
        let u = util(&[(0, 0); 4], &[(50, 100), (50, 100), (0, 100), (0, 100)]).unwrap();
        assert_eq!(u.sample.utilization, 0.25);
    }

    #[test]
    fn jitter_is_clamped_and_flagged() {
        let u = util(&[(0, 0)], &[(101, 100)]).unwrap();
        assert_eq!(u.sample.utilization, 1.0);
        assert!(u.clamped);
    }

    #[test]
    fn stalled_core_is_an_error() {
        assert_eq!(
            util(&[(0, 0), (5, 10)], &[(10, 10), (5, 10)]).unwrap_err(),
            CollectorError::NoElapsedTicks { core: 1 }
        );
    }

    #[test]
    fn parses_proc_stat() {
        let text = "cpu  10 0 10 70 10 0 0 0 0 0\ncpu0 5 0 5 35 5 0 0 0 0 0\ncpu1 5 0 5 35 5 0 0 0 0 0\nintr 1 2\n";
        let t = parse_proc_stat(text, 7).unwrap();
        assert_eq!(t.cores, vec![CoreTicks { busy: 10, total: 50 }; 2]);
        let only_aggregate = parse_proc_stat("cpu 1 0 1 8 0\n", 0).unwrap();
        assert_eq!(only_aggregate.cores, vec![CoreTicks { busy: 2, total: 10 }]);
        assert!(parse_proc_stat("intr 1\n", 0).is_err());
    }
}
