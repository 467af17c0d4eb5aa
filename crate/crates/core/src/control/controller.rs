use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::time::{Duration, Instant};

use super::broker::{Broker, BrokerEvent, Subscription};
use super::message::{topic, AgentRole, BatchGap, ControlMessage, Health, Payload, SamplerCost};
use super::ControlError;
use crate::clock::{CancelToken, Clock};
use crate::meters::LoopReport;
use crate::telemetry::{
    ExperimentPlan, Flag, GapEvent, MeterDescriptor, MeterFamily, PhaseMark, PhaseOutcome, Reading, RunStatus, Scope,
    TimestampMs, TraceRun,
};

const PUMP: Duration = Duration::from_millis(10);

#[derive(Clone, Debug)]
pub struct ControllerConfig {
    pub controller_id: String,
    pub run_id: String,
    /// Real time allowed for the expected agents to register.
    pub register_timeout: Duration,
    /// Real time allowed for every agent to confirm a phase.
    pub ready_timeout: Duration,
    /// Unanswered control messages are republished at this interval.
    pub resend_interval: Duration,
    /// Lockstep only: real time to wait for one tick's batches.
    pub tick_timeout: Duration,
    /// Consecutive ticks without a batch after which an agent is lost.
    pub liveness_ticks: u32,
    /// Real-time runs only: extra wait for in-flight batches after a phase.
    pub grace: Duration,
    pub host_metadata: BTreeMap<String, String>,
}

impl ControllerConfig {
    pub fn new(run_id: impl Into<String>) -> Self {
        Self {
            controller_id: "controller".into(),
            run_id: run_id.into(),
            register_timeout: Duration::from_secs(10),
            ready_timeout: Duration::from_secs(60),
            resend_interval: Duration::from_millis(500),
            tick_timeout: Duration::from_secs(5),
            liveness_ticks: 3,
            grace: Duration::from_millis(500),
            host_metadata: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    Registering,
    Between,
    WaitingReady(usize),
    Running(usize),
}

struct AgentInfo {
    role: AgentRole,
    meters: Vec<MeterDescriptor>,
    last_batch: Option<Instant>,
    missed: u32,
    cost: Option<(f64, i64, u32)>,
}

struct Controller<'a> {
    plan: ExperimentPlan,
    broker: &'a dyn Broker,
    clock: &'a dyn Clock,
    cancel: &'a CancelToken,
    config: ControllerConfig,
    sub: Subscription,
    seq: u64,
    run: TraceRun,
    stage: Stage,
    agents: BTreeMap<String, AgentInfo>,
    ready: BTreeMap<String, PhaseOutcome>,
    batches: HashSet<(String, usize, u64)>,
    last_stamp: HashMap<String, TimestampMs>,
    degraded: HashSet<(String, usize)>,
    abort: Option<String>,
}

/// Drives one run to completion and returns the collected trace.
///
/// Failures after the broker is reachable do not return `Err`: the trace is
/// returned with status `Incomplete` and whatever was collected.
pub fn run_controller(
    plan: &ExperimentPlan,
    broker: &dyn Broker,
    expected: &[AgentRole],
    clock: &dyn Clock,
    config: ControllerConfig,
    cancel: &CancelToken,
) -> Result<TraceRun, ControlError> {
    plan.validate()?;
    if expected.is_empty() {
        return Err(ControlError::NoExpectedAgents);
    }
    let topics: Vec<String> = ["register", "phase_ready", "metric_batch", "abort"]
        .into_iter()
        .map(topic)
        .collect();
    let sub = broker.subscribe(&topics)?;
    let mut run = TraceRun::new(config.run_id.clone(), plan.clone(), clock.now_ms());
    run.host_metadata = config.host_metadata.clone();
    let mut c = Controller {
        plan: plan.clone(),
        broker,
        clock,
        cancel,
        config,
        sub,
        seq: 0,
        run,
        stage: Stage::Registering,
        agents: BTreeMap::new(),
        ready: BTreeMap::new(),
        batches: HashSet::new(),
        last_stamp: HashMap::new(),
        degraded: HashSet::new(),
        abort: None,
    };
    c.execute(expected);
    Ok(c.finish())
}

impl Controller<'_> {
    fn publish(&mut self, payload: Payload) {
        self.seq += 1;
        let message = ControlMessage {
            run_id: Some(self.config.run_id.clone()),
            sender_id: self.config.controller_id.clone(),
            sent_at_ms: self.clock.now_ms(),
            seq: self.seq,
            payload,
        };
        if let Err(e) = self.broker.publish(&message.payload.topic(), &message) {
            log::warn!("controller: publish failed: {e}");
        }
    }

    fn flag(&mut self, kind: &str, detail: String) {
        log::debug!("controller: {kind}: {detail}");
        self.run.flags.push(Flag {
            timestamp_ms: self.clock.now_ms(),
            kind: kind.to_owned(),
            detail,
        });
    }

    fn fail(&mut self, reason: String) {
        if self.abort.is_none() {
            log::warn!("controller: aborting: {reason}");
            self.abort = Some(reason);
        }
    }

    /// Handles every event that arrives within `wait`.
    fn pump(&mut self, wait: Duration) {
        if self.cancel.is_cancelled() {
            self.fail("cancelled".into());
            return;
        }
        let mut timeout = wait;
        loop {
            match self.sub.recv_timeout(timeout) {
                Ok(Some(BrokerEvent::Message { message, .. })) => self.handle(message),
                Ok(Some(BrokerEvent::Reconnected)) => log::info!("controller: broker connection re-established"),
                Ok(None) => return,
                Err(e) => {
                    self.fail(format!("broker: {e}"));
                    return;
                }
            }
            timeout = Duration::ZERO;
        }
    }

    fn handle(&mut self, m: ControlMessage) {
        if m.sender_id == self.config.controller_id {
            return;
        }
        let is_register = matches!(m.payload, Payload::Register { .. });
        if !is_register && m.run_id.as_deref() != Some(self.config.run_id.as_str()) {
            log::debug!("controller: ignoring message for run {:?}", m.run_id);
            return;
        }
        let sender = m.sender_id.clone();
        match m.payload {
            Payload::Register { role, meters } => self.on_register(sender, role, meters),
            Payload::PhaseReady { phase, outcome, health } => {
                if !self.agents.contains_key(&sender) {
                    return;
                }
                if self.stage == Stage::WaitingReady(phase) {
                    self.ready.entry(sender.clone()).or_insert(outcome);
                } else if self.stage == Stage::Running(phase) && !self.clock.is_lockstep() {
                    // the agent missed the release, e.g. across a reconnect
                    self.release(phase);
                }
                if let Health::Degraded { reason } = health {
                    self.note_degraded(&sender, phase, reason);
                }
            }
            Payload::MetricBatch {
                phase,
                tick,
                readings,
                gaps,
                health,
                cost,
            } => self.on_batch(sender, phase, tick, readings, gaps, health, cost),
            Payload::Abort { reason } => self.fail(format!("agent {sender} aborted: {reason}")),
            _ => {}
        }
    }

    fn on_register(&mut self, sender: String, role: AgentRole, meters: Vec<MeterDescriptor>) {
        if let Err(e) = role.validate() {
            self.flag("invalid_registration", format!("{sender}: {e}"));
            return;
        }
        let known = self.agents.contains_key(&sender);
        if !known && self.stage != Stage::Registering {
            self.flag(
                "late_registration",
                format!("{sender} registered after the plan was sent"),
            );
            return;
        }
        self.agents
            .entry(sender.clone())
            .and_modify(|a| a.meters.clone_from(&meters))
            .or_insert(AgentInfo {
                role,
                meters,
                last_batch: None,
                missed: 0,
                cost: None,
            });
        self.publish(Payload::RegisterAck { agent_id: sender });
        if self.stage != Stage::Registering {
            // a returning agent needs the plan and the phase in progress
            self.publish(Payload::Plan {
                plan: self.plan.clone(),
            });
            match self.stage {
                Stage::WaitingReady(p) | Stage::Running(p) => self.publish(Payload::StartPhase { phase: p }),
                _ => {}
            }
        }
    }

    fn note_degraded(&mut self, sender: &str, phase: usize, reason: String) {
        if self.degraded.insert((sender.to_owned(), phase)) {
            self.flag("degraded_health", format!("{sender} phase {phase}: {reason}"));
        }
    }

    fn stamp(&mut self, key: String) -> TimestampMs {
        let now = self.clock.now_ms();
        let t = match self.last_stamp.get(&key) {
            Some(&last) if last >= now => last + 1,
            _ => now,
        };
        self.last_stamp.insert(key, t);
        t
    }

    #[allow(clippy::too_many_arguments)]
    fn on_batch(
        &mut self,
        sender: String,
        phase: usize,
        tick: u64,
        readings: Vec<Reading>,
        gaps: Vec<BatchGap>,
        health: Health,
        cost: Option<SamplerCost>,
    ) {
        if !self.agents.contains_key(&sender) {
            return;
        }
        if !self.batches.insert((sender.clone(), phase, tick)) {
            return;
        }
        match self.stage {
            Stage::Running(p) if p == phase => {}
            Stage::WaitingReady(p) if p == phase => {
                self.flag(
                    "barrier_violation",
                    format!("{sender} sent phase {phase} tick {tick} before every agent was ready"),
                );
                return;
            }
            _ => {
                self.flag("late_batch", format!("{sender} phase {phase} tick {tick} discarded"));
                return;
            }
        }
        if let Some(a) = self.agents.get_mut(&sender) {
            a.last_batch = Some(Instant::now());
            a.missed = 0;
            if let Some(c) = cost {
                let (cpu, wall, _) = a.cost.unwrap_or((0.0, 0, c.cores));
                a.cost = Some((cpu + c.cpu_time_ms, wall + c.wall_ms, c.cores));
            }
        }
        for mut r in readings {
            let key = r.stream_key();
            let t = self.stamp(key);
            r.set_timestamp_ms(t);
            match r.validate() {
                Ok(()) => self.run.push(r),
                Err(e) => self.flag("invalid_reading", format!("{sender}: {e}")),
            }
        }
        for g in gaps {
            let now = self.clock.now_ms();
            self.run.gaps.push(GapEvent {
                timestamp_ms: now,
                source: format!("{sender}/{}", g.source),
                phase,
                tick,
                reason: g.reason,
            });
        }
        if let Health::Degraded { reason } = health {
            self.note_degraded(&sender, phase, reason);
        }
    }

    fn satisfied(&self, expected: &[AgentRole]) -> bool {
        // greedy matching is enough: roles rarely overlap
        let mut used = BTreeSet::new();
        expected.iter().all(|want| {
            match self
                .agents
                .iter()
                .find(|(id, a)| !used.contains(*id) && a.role.satisfies(want))
            {
                Some((id, _)) => {
                    used.insert((*id).clone());
                    true
                }
                None => false,
            }
        })
    }

    fn execute(&mut self, expected: &[AgentRole]) {
        let deadline = Instant::now() + self.config.register_timeout;
        while !self.satisfied(expected) {
            if Instant::now() >= deadline {
                let reason = if self.agents.is_empty() {
                    "no agents registered".to_owned()
                } else {
                    format!(
                        "expected agents missing at registration; registered: {}",
                        self.agents.keys().cloned().collect::<Vec<_>>().join(", ")
                    )
                };
                self.fail(reason);
            }
            if self.abort.is_some() {
                return;
            }
            self.pump(PUMP);
        }
        self.stage = Stage::Between;
        self.publish(Payload::Plan {
            plan: self.plan.clone(),
        });
        for p in 0..self.plan.phases.len() {
            self.run_phase(p);
            if self.abort.is_some() {
                return;
            }
        }
    }

    fn run_phase(&mut self, p: usize) {
        self.stage = Stage::WaitingReady(p);
        self.ready.clear();
        self.publish(Payload::StartPhase { phase: p });
        let deadline = Instant::now() + self.config.ready_timeout;
        let mut resend = Instant::now() + self.config.resend_interval;
        while self.ready.len() < self.agents.len() {
            if Instant::now() >= deadline {
                let missing: Vec<String> = self
                    .agents
                    .keys()
                    .filter(|id| !self.ready.contains_key(*id))
                    .cloned()
                    .collect();
                self.fail(format!("phase {p}: no readiness from {}", missing.join(", ")));
            }
            if self.abort.is_some() {
                return;
            }
            if Instant::now() >= resend {
                self.publish(Payload::StartPhase { phase: p });
                resend = Instant::now() + self.config.resend_interval;
            }
            self.pump(PUMP);
        }
        let outcome = self
            .ready
            .values()
            .find(|o| matches!(o, PhaseOutcome::TargetUnreachable { .. }))
            .cloned()
            .unwrap_or(PhaseOutcome::Completed);

        let start = self.clock.now_ms();
        self.stage = Stage::Running(p);
        if !self.clock.is_lockstep() {
            self.release(p);
        }
        for a in self.agents.values_mut() {
            a.last_batch = Some(Instant::now());
            a.missed = 0;
        }
        let n = self.plan.ticks_in_phase(p);
        let period = self.plan.sample_period_ms as i64;
        if self.clock.is_lockstep() {
            self.lockstep_ticks(p, start, n, period);
        } else {
            self.realtime_ticks(start + n as i64 * period, period);
        }
        let mut end = self.clock.now_ms();
        if let Some(&latest) = self.last_stamp.values().max() {
            end = end.max(latest);
        }
        self.stage = Stage::Between;
        self.publish(Payload::PhaseDone { phase: p });
        self.run.phase_marks.push(PhaseMark {
            index: p,
            start_ms: start,
            end_ms: end,
            outcome: if self.abort.is_some() {
                PhaseOutcome::Interrupted
            } else {
                outcome
            },
        });
        // later stamps must not fall into this phase's window
        for t in self.last_stamp.values_mut() {
            *t = (*t).max(end);
        }
    }

    /// Tells agents on the wall clock that every agent is ready, so they
    /// start sampling. Sent as a controller-authored readiness message.
    fn release(&mut self, phase: usize) {
        self.publish(Payload::PhaseReady {
            phase,
            outcome: PhaseOutcome::Completed,
            health: Health::Ok,
        });
    }

    fn lockstep_ticks(&mut self, p: usize, start: TimestampMs, n: u64, period: i64) {
        for k in 1..=n {
            if !self.clock.advance_to(start + k as i64 * period, self.cancel) {
                self.fail("cancelled".into());
                return;
            }
            let deadline = Instant::now() + self.config.tick_timeout;
            loop {
                let waiting: Vec<String> = self
                    .agents
                    .keys()
                    .filter(|id| !self.batches.contains(&((*id).clone(), p, k)))
                    .cloned()
                    .collect();
                if waiting.is_empty() {
                    break;
                }
                if Instant::now() >= deadline {
                    for id in waiting {
                        let a = self.agents.get_mut(&id).expect("known agent");
                        a.missed += 1;
                        let missed = a.missed;
                        if missed >= self.config.liveness_ticks {
                            self.fail(format!("agent {id} lost: no metrics for {missed} ticks"));
                        }
                    }
                    break;
                }
                self.pump(PUMP);
                if self.abort.is_some() {
                    return;
                }
            }
            if self.abort.is_some() {
                return;
            }
        }
    }

    fn realtime_ticks(&mut self, until: TimestampMs, period: i64) {
        let liveness =
            Duration::from_millis(period as u64 * u64::from(self.config.liveness_ticks.max(1))) + self.config.grace;
        while self.clock.now_ms() < until {
            self.pump(PUMP);
            if self.abort.is_some() {
                return;
            }
            let lost: Vec<String> = self
                .agents
                .iter()
                .filter(|(_, a)| a.last_batch.is_some_and(|t| t.elapsed() > liveness))
                .map(|(id, _)| id.clone())
                .collect();
            if let Some(id) = lost.first() {
                self.fail(format!("agent {id} lost: no metrics within {liveness:?}"));
                return;
            }
        }
        let grace_end = Instant::now() + self.config.grace;
        while Instant::now() < grace_end && self.abort.is_none() {
            self.pump(PUMP);
        }
    }

    fn overhead_metadata(&mut self) {
        let sw: Option<String> = self
            .run
            .meters
            .iter()
            .find(|m| m.family == MeterFamily::Software)
            .map(|m| m.meter_id.as_str().to_owned());
        let host: Vec<(TimestampMs, f64)> = self
            .run
            .power
            .iter()
            .filter(|s| Some(s.source.as_str()) == sw.as_deref() && s.scope == Scope::Host)
            .map(|s| (s.timestamp_ms, s.power_mw))
            .collect();
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let all: Vec<f64> = host.iter().map(|p| p.1).collect();
        let idle: Vec<f64> = host
            .iter()
            .filter(|(t, _)| {
                self.run
                    .phase_at(*t)
                    .is_some_and(|m| self.plan.phases[m.index].kind.is_idle())
            })
            .map(|p| p.1)
            .collect();
        let util = mean(&self.run.cpu.iter().map(|c| c.utilization).collect::<Vec<_>>());
        let floor = mean(&idle).or_else(|| all.iter().copied().reduce(f64::min));
        for (id, a) in &self.agents {
            let Some((cpu, wall, cores)) = a.cost else { continue };
            let value = match (mean(&all), floor) {
                (Some(power), Some(floor)) => {
                    let report = LoopReport {
                        cpu_time_ms: cpu,
                        wall_ms: wall,
                        ..Default::default()
                    };
                    let busy = util.map_or(cpu, |u| u * wall as f64 * f64::from(cores.max(1)));
                    format!("{:.3}", report.overhead_mw(power, floor, busy.max(cpu)))
                }
                _ => "unavailable: no software meter".to_owned(),
            };
            self.run
                .host_metadata
                .insert(format!("sampler_overhead_mw/{id}"), value);
        }
    }

    fn finish(mut self) -> TraceRun {
        let status = match self.abort.clone() {
            Some(reason) => {
                self.publish(Payload::Abort { reason: reason.clone() });
                RunStatus::Incomplete { reason }
            }
            None => RunStatus::Complete,
        };
        self.publish(Payload::RunComplete { status: status.clone() });
        for (id, a) in &self.agents {
            let caps: Vec<&str> = a.role.capabilities.iter().map(String::as_str).collect();
            self.run
                .host_metadata
                .insert(format!("agent/{id}"), format!("{:?}: {}", a.role.role, caps.join(",")));
            for m in &a.meters {
                if self.run.meter(&m.meter_id).is_none() {
                    self.run.meters.push(m.clone());
                }
            }
        }
        self.overhead_metadata();
        self.run.status = status;
        let mut end = self.clock.now_ms();
        if let Some(&latest) = self.last_stamp.values().max() {
            end = end.max(latest);
        }
        self.run.end_ms = end;
        self.run.canonicalize();
        self.run
    }
}
