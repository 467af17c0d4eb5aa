//! Busy-loop CPU load shaper.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::{DriverError, LoadDriver, PhaseTarget};
use crate::meters::thread_cpu_time_ms;
use crate::telemetry::PhaseKind;

const DUTY_PERIOD: Duration = Duration::from_millis(50);

struct Worker {
    handle: JoinHandle<()>,
    /// Thread CPU time in µs, updated every duty period.
    cpu_us: Arc<AtomicU64>,
}

/// Drives each core at a fixed duty cycle: busy for `target` of every
/// period, asleep for the rest.
pub struct CpuStressDriver {
    cores: usize,
    workers: Vec<Worker>,
    stop: Arc<AtomicBool>,
    last: Option<(Instant, u64)>,
}

impl CpuStressDriver {
    pub fn new() -> Self {
        Self::with_cores(std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    pub fn with_cores(cores: usize) -> Self {
        Self {
            cores: cores.max(1),
            workers: Vec::new(),
            stop: Arc::new(AtomicBool::new(false)),
            last: None,
        }
    }

    pub fn active_workers(&self) -> usize {
        self.workers.len()
    }

    fn total_cpu_us(&self) -> u64 {
        self.workers.iter().map(|w| w.cpu_us.load(Ordering::Relaxed)).sum()
    }

    fn spawn(&mut self, duty: f64) {
        self.stop = Arc::new(AtomicBool::new(false));
        for _ in 0..self.cores {
            let stop = Arc::clone(&self.stop);
            let cpu_us = Arc::new(AtomicU64::new(0));
            let report = Arc::clone(&cpu_us);
            let handle = std::thread::spawn(move || {
                let busy = DUTY_PERIOD.mul_f64(duty);
                let base = thread_cpu_time_ms();
                while !stop.load(Ordering::Relaxed) {
                    let start = Instant::now();
                    while start.elapsed() < busy {
                        std::hint::spin_loop();
                    }
                    if let Some(rest) = DUTY_PERIOD.checked_sub(start.elapsed()) {
                        if !rest.is_zero() {
                            std::thread::sleep(rest);
                        }
                    }
                    report.store(((thread_cpu_time_ms() - base) * 1e3) as u64, Ordering::Relaxed);
                }
            });
            self.workers.push(Worker { handle, cpu_us });
        }
    }
}

impl Default for CpuStressDriver {
    fn default() -> Self {
        Self::new()
    }
}

impl LoadDriver for CpuStressDriver {
    fn name(&self) -> &str {
        "cpu-stress"
    }

    fn capabilities(&self) -> Vec<String> {
        vec!["cpu".into()]
    }

    fn handles(&self, kind: &PhaseKind) -> bool {
        matches!(kind, PhaseKind::Cpu { .. })
    }

    fn start(&mut self, target: &PhaseTarget) -> Result<(), DriverError> {
        self.stop()?;
        let load = target.value();
        if !(0.0..=1.0).contains(&load) {
            return Err(DriverError::Config(format!("load {load} outside [0, 1]")));
        }
        if load > 0.0 {
            self.spawn(load);
        }
        self.last = Some((Instant::now(), 0));
        Ok(())
    }

    /// Load generated by this driver since the previous call, as a fraction
    /// of all cores.
    fn achieved(&mut self) -> Result<Option<f64>, DriverError> {
        let now = Instant::now();
        let cpu = self.total_cpu_us();
        let Some((then, prev)) = self.last.replace((now, cpu)) else {
            return Ok(Some(0.0));
        };
        let wall_us = now.duration_since(then).as_micros() as f64 * self.cores as f64;
        if wall_us == 0.0 {
            return Ok(Some(0.0));
        }
        Ok(Some(((cpu.saturating_sub(prev)) as f64 / wall_us).clamp(0.0, 1.0)))
    }

    fn stop(&mut self) -> Result<(), DriverError> {
        self.stop.store(true, Ordering::Relaxed);
        for w in self.workers.drain(..) {
            w.handle
                .join()
                .map_err(|_| DriverError::Failed("stress worker panicked".into()))?;
        }
        self.last = None;
        Ok(())
    }
}

impl Drop for CpuStressDriver {
    fn drop(&mut self) {
        let _ = self.stop();
    }
}
