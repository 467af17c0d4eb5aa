//! Time sources shared by samplers, agents and the controller.
//!
//! Real deployments run on [`SystemClock`]. Simulated runs use a
//! [`VirtualClock`] that only moves when the controller advances it, which
//! makes every timestamp in a simulated trace reproducible.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

/// Cooperative cancellation flag shared between activities.
#[derive(Clone, Debug, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

/// Poll granularity used while blocked on a clock, bounding cancellation latency.
const POLL: Duration = Duration::from_millis(5);

pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch.
    fn now_ms(&self) -> i64;

    /// Blocks until `now_ms() >= deadline`. Returns `false` if cancelled first.
    fn sleep_until(&self, deadline: i64, cancel: &CancelToken) -> bool;

    /// Moves time forward to `deadline`. On a driven clock this is the only
    /// way time advances; on a wall clock it is equivalent to sleeping.
    fn advance_to(&self, deadline: i64, cancel: &CancelToken) -> bool {
        self.sleep_until(deadline, cancel)
    }

    /// True when time only moves through [`Clock::advance_to`].
    fn is_lockstep(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> i64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0)
    }

    fn sleep_until(&self, deadline: i64, cancel: &CancelToken) -> bool {
        loop {
            if cancel.is_cancelled() {
                return false;
            }
            let now = self.now_ms();
            if now >= deadline {
                return true;
            }
            let left = Duration::from_millis((deadline - now) as u64);
            std::thread::sleep(left.min(POLL));
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VirtualMode {
    /// `sleep_until` jumps straight to the deadline. Single-activity tests only.
    AutoAdvance,
    /// Sleepers block until another activity calls `advance_to`.
    Driven,
}

/// Deterministic clock for compressed-time runs.
#[derive(Debug)]
pub struct VirtualClock {
    now: Mutex<i64>,
    moved: Condvar,
    mode: VirtualMode,
}

impl VirtualClock {
    pub fn new(start_ms: i64, mode: VirtualMode) -> Self {
        Self {
            now: Mutex::new(start_ms),
            moved: Condvar::new(),
            mode,
        }
    }

    pub fn driven(start_ms: i64) -> Arc<Self> {
        Arc::new(Self::new(start_ms, VirtualMode::Driven))
    }

    pub fn auto(start_ms: i64) -> Arc<Self> {
        Arc::new(Self::new(start_ms, VirtualMode::AutoAdvance))
    }

    fn set_at_least(&self, t: i64) {
        let mut now = self.now.lock().expect("clock poisoned");
        if t > *now {
            *now = t;
        }
        self.moved.notify_all();
    }
}

impl Clock for VirtualClock {
    fn now_ms(&self) -> i64 {
        *self.now.lock().expect("clock poisoned")
    }

    fn sleep_until(&self, deadline: i64, cancel: &CancelToken) -> bool {
        if cancel.is_cancelled() {
            return false;
        }
        if self.mode == VirtualMode::AutoAdvance {
            self.set_at_least(deadline);
            return true;
        }
        let mut now = self.now.lock().expect("clock poisoned");
        while *now < deadline {
            if cancel.is_cancelled() {
                return false;
            }
            now = self.moved.wait_timeout(now, POLL).expect("clock poisoned").0;
        }
        true
    }

    fn advance_to(&self, deadline: i64, cancel: &CancelToken) -> bool {
        if cancel.is_cancelled() {
            return false;
        }
        self.set_at_least(deadline);
        true
    }

    fn is_lockstep(&self) -> bool {
        self.mode == VirtualMode::Driven
    }
}
