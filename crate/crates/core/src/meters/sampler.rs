use crate::attribution::{attribute, ProcessCpuDelta};
use crate::clock::{CancelToken, Clock};
use crate::telemetry::{Reading, TimestampMs};

use super::{MeterError, Sampler};

pub const MIN_PERIOD_MS: u64 = 100;

#[derive(Clone, Debug)]
pub struct LoopConfig {
    pub period_ms: u64,
    /// Tick `k` fires at `start_ms + k * period_ms`, starting at `k = 1`.
    pub start_ms: TimestampMs,
    pub max_ticks: Option<u64>,
    /// No tick fires after this instant.
    pub stop_at_ms: Option<TimestampMs>,
}

impl LoopConfig {
    pub fn new(period_ms: u64, start_ms: TimestampMs) -> Self {
        Self {
            period_ms,
            start_ms,
            max_ticks: None,
            stop_at_ms: None,
        }
    }

    pub fn ticks(mut self, n: u64) -> Self {
        self.max_ticks = Some(n);
        self
    }

    pub fn until(mut self, t: TimestampMs) -> Self {
        self.stop_at_ms = Some(t);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SamplerEvent {
    Samples {
        tick: u64,
        at_ms: TimestampMs,
        readings: Vec<Reading>,
    },
    Gap {
        tick: u64,
        at_ms: TimestampMs,
        source: String,
        reason: String,
    },
}

impl SamplerEvent {
    pub fn tick(&self) -> u64 {
        match self {
            SamplerEvent::Samples { tick, .. } | SamplerEvent::Gap { tick, .. } => *tick,
        }
    }
}

/// Summary of one loop run, including the loop's own CPU cost.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoopReport {
    pub ticks: u64,
    pub samples: u64,
    pub gaps: u64,
    /// CPU time consumed by the sampling thread itself.
    pub cpu_time_ms: f64,
    pub wall_ms: i64,
}

impl LoopReport {
    /// Power drawn by the sampler, attributed like any other process: its
    /// CPU time against the rest of the host's busy time over the run.
    pub fn overhead_mw(&self, host_power_mw: f64, idle_floor_mw: f64, host_busy_ms: f64) -> f64 {
        let window = (0, self.wall_ms.max(1));
        let own = self.cpu_time_ms.max(0.0);
        let deltas = [
            ProcessCpuDelta {
                pid: std::process::id(),
                command: "edgewatt-sampler".into(),
                cpu_time_delta: own,
                window,
            },
            ProcessCpuDelta {
                pid: 0,
                command: "rest-of-host".into(),
                cpu_time_delta: (host_busy_ms - own).max(0.0),
                window,
            },
        ];
        attribute(host_power_mw.max(0.0), idle_floor_mw.clamp(0.0, f64::MAX), &deltas)
            .ok()
            .and_then(|r| r.entries.into_iter().find(|e| e.command == "edgewatt-sampler"))
            .map(|e| e.power_mw)
            .unwrap_or(0.0)
    }
}

/// CPU time consumed so far by the calling thread.
pub fn thread_cpu_time_ms() -> f64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid, writable timespec.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return 0.0;
    }
    ts.tv_sec as f64 * 1e3 + ts.tv_nsec as f64 / 1e6
}

/// Polls `driver` once per period until cancelled or a configured bound is
/// reached. Driver failures become gap events; the loop keeps going.
pub fn sample_loop(
    driver: &mut dyn Sampler,
    clock: &dyn Clock,
    config: &LoopConfig,
    sink: &mut dyn FnMut(SamplerEvent),
    cancel: &CancelToken,
) -> Result<LoopReport, MeterError> {
    if config.period_ms < MIN_PERIOD_MS {
        return Err(MeterError::PeriodTooShort(config.period_ms));
    }
    let cpu_start = thread_cpu_time_ms();
    let mut report = LoopReport::default();
    if let Err(e) = driver.prime(clock) {
        log::warn!("{}: priming failed: {e}", driver.name());
    }
    let period = config.period_ms as i64;
    let mut tick = 0u64;
    loop {
        if config.max_ticks.is_some_and(|n| tick >= n) {
            break;
        }
        let due = config.start_ms + (tick as i64 + 1) * period;
        if config.stop_at_ms.is_some_and(|stop| due > stop) {
            break;
        }
        if !clock.sleep_until(due, cancel) {
            break;
        }
        tick += 1;
        match driver.sample(clock) {
            Ok(readings) => {
                report.samples += readings.len() as u64;
                sink(SamplerEvent::Samples {
                    tick,
                    at_ms: due,
                    readings,
                });
            }
            Err(e) => {
                report.gaps += 1;
                sink(SamplerEvent::Gap {
                    tick,
                    at_ms: due,
                    source: driver.name().to_owned(),
                    reason: e.to_string(),
                });
            }
        }
    }
    report.ticks = tick;
    report.wall_ms = clock.now_ms() - config.start_ms;
    report.cpu_time_ms = (thread_cpu_time_ms() - cpu_start).max(0.0);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;
    use crate::meters::SampleError;
    use crate::telemetry::{PowerSample, Scope};

    struct Flaky {
        calls: u64,
        fail_on: Vec<u64>,
    }

    impl Sampler for Flaky {
        fn name(&self) -> &str {
            "flaky"
        }

        fn sample(&mut self, clock: &dyn Clock) -> Result<Vec<Reading>, SampleError> {
            self.calls += 1;
            if self.fail_on.contains(&self.calls) {
                return Err(SampleError("dropped".into()));
            }
            Ok(vec![Reading::Power(PowerSample::new(
                clock.now_ms(),
                "sim".into(),
                Scope::Host,
                1000.0,
            ))])
        }
    }

    fn run(fail_on: Vec<u64>, config: LoopConfig) -> (Vec<SamplerEvent>, LoopReport) {
        let clock = VirtualClock::auto(0);
        let mut driver = Flaky { calls: 0, fail_on };
        let mut events = Vec::new();
        let report = sample_loop(
            &mut driver,
            clock.as_ref(),
            &config,
            &mut |e| events.push(e),
            &CancelToken::new(),
        )
        .unwrap();
        (events, report)
    }

    #[test]
    fn ten_second_run_yields_ten_samples() {
        let (events, report) = run(vec![], LoopConfig::new(1000, 0).until(10_000));
        assert!((9..=11).contains(&events.len()));
        assert_eq!(report.samples, 10);
        assert_eq!(report.gaps, 0);
    }

    #[test]
    fn failing_ticks_become_gaps() {
        let (events, report) = run(vec![3, 4], LoopConfig::new(1000, 0).ticks(10));
        assert_eq!(report.samples, 8);
        assert_eq!(report.gaps, 2);
        let gap_ticks: Vec<u64> = events
            .iter()
            .filter(|e| matches!(e, SamplerEvent::Gap { .. }))
            .map(SamplerEvent::tick)
            .collect();
        assert_eq!(gap_ticks, vec![3, 4]);
    }

    #[test]
    fn short_period_is_rejected() {
        let clock = VirtualClock::auto(0);
        let mut driver = Flaky {
            calls: 0,
            fail_on: vec![],
        };
        let err = sample_loop(
            &mut driver,
            clock.as_ref(),
            &LoopConfig::new(50, 0).ticks(1),
            &mut |_| {},
            &CancelToken::new(),
        )
        .unwrap_err();
        assert_eq!(err, MeterError::PeriodTooShort(50));
    }

    #[test]
    fn cancellation_stops_the_loop() {
        let clock = VirtualClock::driven(0);
        let cancel = CancelToken::new();
        let (c2, k2) = (std::sync::Arc::clone(&clock), cancel.clone());
        let handle = std::thread::spawn(move || {
            let mut driver = Flaky {
                calls: 0,
                fail_on: vec![],
            };
            sample_loop(&mut driver, c2.as_ref(), &LoopConfig::new(1000, 0), &mut |_| {}, &k2).unwrap()
        });
        clock.advance_to(3000, &CancelToken::new());
        std::thread::sleep(std::time::Duration::from_millis(50));
        cancel.cancel();
        let report = handle.join().unwrap();
        assert_eq!(report.ticks, 3);
    }

    #[test]
    fn self_overhead_is_non_negative() {
        let (_, report) = run(vec![], LoopConfig::new(1000, 0).ticks(5));
        assert!(report.cpu_time_ms >= 0.0);
        let mw = report.overhead_mw(8_000.0, 3_000.0, 2_000.0);
        assert!((0.0..=5_000.0).contains(&mw));
        let synthetic = LoopReport {
            cpu_time_ms: 100.0,
            wall_ms: 10_000,
            ..Default::default()
        };
        // 100 of 1000 busy ms -> a tenth of the 5 W dynamic power
        assert!((synthetic.overhead_mw(8_000.0, 3_000.0, 1_000.0) - 500.0).abs() < 1e-9);
    }
}
