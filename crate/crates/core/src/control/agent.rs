use std::collections::BTreeMap;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError};

use super::broker::{Broker, BrokerEvent, Subscription};
use super::message::{topic, AgentRole, BatchGap, ControlMessage, Health, Payload, SamplerCost};
use crate::clock::{CancelToken, Clock};
use crate::meters::{sample_loop, LoopConfig, LoopReport, Sampler, SamplerEvent};
use crate::telemetry::{ExperimentPlan, PhaseKind, PhaseOutcome, Reading, RunStatus};
use crate::workload::{settle, LoadDriver, PhaseTarget, Settle, SettleRule};

#[derive(Clone, Debug)]
pub struct AgentConfig {
    pub agent_id: String,
    pub role: AgentRole,
    /// Only join this run. `None` joins whichever controller acknowledges first.
    pub run_id: Option<String>,
    pub register_interval: Duration,
    pub settle: SettleRule,
}

impl AgentConfig {
    pub fn new(agent_id: impl Into<String>, role: AgentRole) -> Self {
        Self {
            agent_id: agent_id.into(),
            role,
            run_id: None,
            register_interval: Duration::from_millis(250),
            settle: SettleRule::default(),
        }
    }
}

#[derive(Default)]
pub struct AgentDrivers {
    pub samplers: Vec<Box<dyn Sampler>>,
    pub loads: Vec<Box<dyn LoadDriver>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AgentExit {
    Completed(RunStatus),
    Aborted(String),
    Cancelled,
    Failed(String),
}

enum Feed {
    Event(SamplerEvent),
    Done(LoopReport),
}

type SampleThread = JoinHandle<(Box<dyn Sampler>, Option<String>)>;

struct ActivePhase {
    index: usize,
    ready: (PhaseOutcome, Health),
    /// Sampling has begun. On the wall clock it waits for the controller's
    /// barrier release; in lockstep time only moves after the barrier anyway.
    sampling: bool,
    stop: CancelToken,
    loops: Vec<SampleThread>,
    aggregator: Option<JoinHandle<()>>,
}

struct Agent {
    config: AgentConfig,
    broker: Arc<dyn Broker>,
    clock: Arc<dyn Clock>,
    cancel: CancelToken,
    seq: u64,
    run_id: Option<String>,
    controller_id: Option<String>,
    plan: Option<ExperimentPlan>,
    samplers: Vec<Box<dyn Sampler>>,
    loads: Vec<Box<dyn LoadDriver>>,
    phase: Option<ActivePhase>,
    finished: Vec<usize>,
}

/// Serves one run: registers, follows the controller's phases and streams
/// one metric batch per tick until the run completes or aborts.
pub fn run_agent(
    config: AgentConfig,
    broker: Arc<dyn Broker>,
    drivers: AgentDrivers,
    clock: Arc<dyn Clock>,
    cancel: CancelToken,
) -> AgentExit {
    let topics: Vec<String> = [
        "register_ack",
        "plan",
        "start_phase",
        "phase_ready",
        "phase_done",
        "abort",
        "run_complete",
    ]
    .into_iter()
    .map(topic)
    .collect();
    let sub = match broker.subscribe(&topics) {
        Ok(s) => s,
        Err(e) => return AgentExit::Failed(format!("subscribe: {e}")),
    };
    let mut agent = Agent {
        run_id: config.run_id.clone(),
        config,
        broker,
        clock,
        cancel,
        seq: 0,
        controller_id: None,
        plan: None,
        samplers: drivers.samplers,
        loads: drivers.loads,
        phase: None,
        finished: Vec::new(),
    };
    let exit = agent.serve(&sub);
    agent.end_phase();
    for d in &mut agent.loads {
        if let Err(e) = d.stop() {
            log::warn!("{}: stopping {}: {e}", agent.config.agent_id, d.name());
        }
    }
    exit
}

impl Agent {
    fn publish(&mut self, payload: Payload) {
        self.seq += 1;
        let message = ControlMessage {
            run_id: self.run_id.clone(),
            sender_id: self.config.agent_id.clone(),
            sent_at_ms: self.clock.now_ms(),
            seq: self.seq,
            payload,
        };
        if let Err(e) = self.broker.publish(&message.payload.topic(), &message) {
            log::warn!("{}: publish failed: {e}", self.config.agent_id);
        }
    }

    fn register(&mut self) {
        let meters = self.samplers.iter().flat_map(|s| s.descriptors()).collect();
        self.publish(Payload::Register {
            role: self.config.role.clone(),
            meters,
        });
    }

    fn serve(&mut self, sub: &Subscription) -> AgentExit {
        let mut acked = false;
        let mut next_register = Instant::now();
        loop {
            if self.cancel.is_cancelled() {
                return AgentExit::Cancelled;
            }
            if !acked && Instant::now() >= next_register {
                self.register();
                next_register = Instant::now() + self.config.register_interval;
            }
            let event = match sub.recv_timeout(Duration::from_millis(10)) {
                Ok(Some(e)) => e,
                Ok(None) => continue,
                Err(e) => return AgentExit::Failed(format!("broker: {e}")),
            };
            let m = match event {
                BrokerEvent::Message { message, .. } => message,
                BrokerEvent::Reconnected => {
                    // the controller may have lost track of us
                    acked = false;
                    continue;
                }
            };
            if m.run_id.is_some() && self.run_id.is_some() && m.run_id != self.run_id {
                continue;
            }
            match m.payload {
                Payload::RegisterAck { agent_id } if agent_id == self.config.agent_id => {
                    if self.run_id.is_none() {
                        self.run_id = m.run_id;
                    }
                    self.controller_id = Some(m.sender_id);
                    acked = true;
                }
                Payload::Plan { plan } => self.plan = Some(plan),
                Payload::StartPhase { phase } if acked => {
                    if let Err(reason) = self.start_phase(phase) {
                        self.publish(Payload::Abort { reason: reason.clone() });
                        return AgentExit::Failed(reason);
                    }
                }
                Payload::PhaseReady { phase, .. } if Some(&m.sender_id) == self.controller_id.as_ref() => {
                    if self.phase.as_ref().is_some_and(|p| p.index == phase && !p.sampling) {
                        self.begin_sampling();
                    }
                }
                Payload::PhaseDone { phase } => {
                    if self.phase.as_ref().is_some_and(|p| p.index == phase) {
                        self.end_phase();
                    }
                }
                Payload::Abort { reason } if m.sender_id != self.config.agent_id => return AgentExit::Aborted(reason),
                Payload::RunComplete { status } => return AgentExit::Completed(status),
                _ => {}
            }
        }
    }

    fn start_phase(&mut self, index: usize) -> Result<(), String> {
        if let Some(active) = &self.phase {
            if active.index == index {
                // controller missed our answer
                let (outcome, health) = active.ready.clone();
                self.publish(Payload::PhaseReady {
                    phase: index,
                    outcome,
                    health,
                });
                return Ok(());
            }
        }
        if self.finished.contains(&index) {
            return Ok(());
        }
        let Some(plan) = self.plan.clone() else {
            // the plan is re-sent with every registration ack
            return Ok(());
        };
        let Some(phase) = plan.phases.get(index) else {
            return Err(format!("phase {index} is not in plan {}", plan.plan_id));
        };
        self.end_phase();

        let target = PhaseTarget {
            index,
            kind: phase.kind.clone(),
            ue_count: plan.ue_count,
            duration_s: phase.duration_s,
        };
        let mut outcome = PhaseOutcome::Completed;
        let mut health = Health::Ok;
        for d in &mut self.loads {
            let active = !matches!(target.kind, PhaseKind::Idle) && d.handles(&target.kind);
            if !active {
                d.stop().map_err(|e| format!("{}: {e}", d.name()))?;
                continue;
            }
            d.start(&target).map_err(|e| format!("{}: {e}", d.name()))?;
            match settle(
                d.as_mut(),
                target.value(),
                &self.config.settle,
                self.clock.as_ref(),
                &self.cancel,
            ) {
                Ok(Settle::Steady) => {}
                Ok(Settle::Unreachable { achieved }) => {
                    log::warn!(
                        "{}: phase {index} target {} not reached ({achieved})",
                        d.name(),
                        target.value()
                    );
                    outcome = PhaseOutcome::TargetUnreachable {
                        achieved_mbps: achieved,
                    };
                }
                Ok(Settle::Cancelled) => return Err("cancelled while settling".into()),
                Err(e) => {
                    health = Health::Degraded {
                        reason: format!("{}: {e}", d.name()),
                    }
                }
            }
        }

        self.phase = Some(ActivePhase {
            index,
            ready: (outcome.clone(), health.clone()),
            sampling: false,
            stop: CancelToken::new(),
            loops: Vec::new(),
            aggregator: None,
        });
        if self.clock.is_lockstep() {
            self.begin_sampling();
        }
        self.publish(Payload::PhaseReady {
            phase: index,
            outcome,
            health,
        });
        Ok(())
    }

    /// Starts the sample loops and the batcher of the active phase.
    fn begin_sampling(&mut self) {
        let (Some(plan), Some(active)) = (self.plan.clone(), self.phase.as_mut()) else {
            return;
        };
        let index = active.index;
        let start = self.clock.now_ms();
        let n = plan.ticks_in_phase(index);
        let (tx, rx) = unbounded();
        for mut sampler in std::mem::take(&mut self.samplers) {
            let (tx, clock, stop) = (tx.clone(), Arc::clone(&self.clock), active.stop.clone());
            let config = LoopConfig::new(plan.sample_period_ms, start).ticks(n);
            active.loops.push(std::thread::spawn(move || {
                let mut sink = |e| {
                    let _ = tx.send(Feed::Event(e));
                };
                match sample_loop(sampler.as_mut(), clock.as_ref(), &config, &mut sink, &stop) {
                    Ok(report) => {
                        let _ = tx.send(Feed::Done(report));
                        (sampler, None)
                    }
                    Err(e) => (sampler, Some(e.to_string())),
                }
            }));
        }
        drop(tx);
        let batcher = Batcher {
            agent_id: self.config.agent_id.clone(),
            run_id: self.run_id.clone(),
            broker: Arc::clone(&self.broker),
            clock: Arc::clone(&self.clock),
            phase: index,
            ticks: n,
            start,
            period_ms: plan.sample_period_ms,
            samplers: active.loops.len(),
            health: active.ready.1.clone(),
            stop: active.stop.clone(),
        };
        active.aggregator = Some(std::thread::spawn(move || batcher.run(rx)));
        active.sampling = true;
    }

    fn end_phase(&mut self) {
        let Some(mut active) = self.phase.take() else { return };
        active.stop.cancel();
        for handle in active.loops.drain(..) {
            match handle.join() {
                Ok((sampler, err)) => {
                    if let Some(e) = err {
                        log::warn!("{}: {}: {e}", self.config.agent_id, sampler.name());
                    }
                    self.samplers.push(sampler);
                }
                Err(_) => log::error!("{}: sampler thread panicked", self.config.agent_id),
            }
        }
        if let Some(h) = active.aggregator.take() {
            let _ = h.join();
        }
        self.finished.push(active.index);
    }
}

/// Collects per-sampler events into one batch per tick.
struct Batcher {
    agent_id: String,
    run_id: Option<String>,
    broker: Arc<dyn Broker>,
    clock: Arc<dyn Clock>,
    phase: usize,
    ticks: u64,
    start: i64,
    period_ms: u64,
    samplers: usize,
    health: Health,
    stop: CancelToken,
}

#[derive(Default)]
struct Pending {
    reported: usize,
    readings: Vec<Reading>,
    gaps: Vec<BatchGap>,
}

impl Batcher {
    fn run(self, rx: Receiver<Feed>) {
        let mut pending: BTreeMap<u64, Pending> = BTreeMap::new();
        let mut reports: Vec<LoopReport> = Vec::new();
        let mut open = true;
        for k in 1..=self.ticks {
            if self.samplers == 0 {
                if !self
                    .clock
                    .sleep_until(self.start + k as i64 * self.period_ms as i64, &self.stop)
                {
                    return;
                }
            } else {
                while open && pending.get(&k).is_none_or(|p| p.reported < self.samplers) {
                    match rx.recv_timeout(Duration::from_millis(50)) {
                        Ok(feed) => self.absorb(feed, &mut pending, &mut reports),
                        Err(RecvTimeoutError::Timeout) if self.stop.is_cancelled() => return,
                        Err(RecvTimeoutError::Timeout) => {}
                        Err(RecvTimeoutError::Disconnected) => open = false,
                    }
                }
            }
            let batch = pending.remove(&k).unwrap_or_default();
            let cost = (k == self.ticks && !self.clock.is_lockstep()).then(|| {
                // sample loops hand in their reports right after the last tick
                while open && reports.len() < self.samplers {
                    match rx.recv_timeout(Duration::from_secs(1)) {
                        Ok(feed) => self.absorb(feed, &mut pending, &mut reports),
                        Err(_) => open = false,
                    }
                }
                SamplerCost {
                    cpu_time_ms: reports.iter().map(|r| r.cpu_time_ms).sum(),
                    wall_ms: reports.iter().map(|r| r.wall_ms).max().unwrap_or(0),
                    cores: std::thread::available_parallelism().map_or(1, |n| n.get() as u32),
                }
            });
            let health = if batch.gaps.is_empty() {
                self.health.clone()
            } else {
                Health::Degraded {
                    reason: format!("{} source(s) missed tick {k}", batch.gaps.len()),
                }
            };
            let message = ControlMessage {
                run_id: self.run_id.clone(),
                sender_id: self.agent_id.clone(),
                sent_at_ms: self.clock.now_ms(),
                seq: k,
                payload: Payload::MetricBatch {
                    phase: self.phase,
                    tick: k,
                    readings: batch.readings,
                    gaps: batch.gaps,
                    health,
                    cost,
                },
            };
            if let Err(e) = self.broker.publish(&message.payload.topic(), &message) {
                log::warn!("{}: batch {k} not sent: {e}", self.agent_id);
            }
        }
    }

    fn absorb(&self, feed: Feed, pending: &mut BTreeMap<u64, Pending>, reports: &mut Vec<LoopReport>) {
        match feed {
            Feed::Event(SamplerEvent::Samples { tick, readings, .. }) => {
                let p = pending.entry(tick).or_default();
                p.reported += 1;
                p.readings.extend(readings);
            }
            Feed::Event(SamplerEvent::Gap {
                tick, source, reason, ..
            }) => {
                let p = pending.entry(tick).or_default();
                p.reported += 1;
                p.gaps.push(BatchGap { source, reason });
            }
            Feed::Done(report) => reports.push(report),
        }
    }
}
