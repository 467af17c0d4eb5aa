use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::telemetry::{ExperimentPlan, MeterDescriptor, PhaseOutcome, Reading, RunStatus, TimestampMs};

pub const TOPIC_PREFIX: &str = "edgewatt/";
pub const METRICS_TOPIC: &str = "edgewatt/metrics";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleKind {
    MeterAgent,
    LoadAgent,
    SinkAgent,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRole {
    pub role: RoleKind,
    pub capabilities: BTreeSet<String>,
}

impl AgentRole {
    pub fn new<I, S>(role: RoleKind, capabilities: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            role,
            capabilities: capabilities.into_iter().map(Into::into).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.capabilities.is_empty() {
            return Err(format!("{:?} declares no capabilities", self.role));
        }
        Ok(())
    }

    /// True when an agent with role `self` can stand in for `wanted`.
    pub fn satisfies(&self, wanted: &AgentRole) -> bool {
        self.role == wanted.role && wanted.capabilities.is_subset(&self.capabilities)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Health {
    Ok,
    Degraded { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchGap {
    pub source: String,
    pub reason: String,
}

/// Sampling cost of one agent over one phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerCost {
    pub cpu_time_ms: f64,
    pub wall_ms: i64,
    pub cores: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "snake_case")]
pub enum Payload {
    Register {
        role: AgentRole,
        meters: Vec<MeterDescriptor>,
    },
    RegisterAck {
        agent_id: String,
    },
    Plan {
        plan: ExperimentPlan,
    },
    StartPhase {
        phase: usize,
    },
    PhaseReady {
        phase: usize,
        outcome: PhaseOutcome,
        health: Health,
    },
    PhaseDone {
        phase: usize,
    },
    MetricBatch {
        phase: usize,
        tick: u64,
        readings: Vec<Reading>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        gaps: Vec<BatchGap>,
        health: Health,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cost: Option<SamplerCost>,
    },
    Abort {
        reason: String,
    },
    RunComplete {
        status: RunStatus,
    },
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Register { .. } => "register",
            Payload::RegisterAck { .. } => "register_ack",
            Payload::Plan { .. } => "plan",
            Payload::StartPhase { .. } => "start_phase",
            Payload::PhaseReady { .. } => "phase_ready",
            Payload::PhaseDone { .. } => "phase_done",
            Payload::MetricBatch { .. } => "metric_batch",
            Payload::Abort { .. } => "abort",
            Payload::RunComplete { .. } => "run_complete",
        }
    }

    /// Topic this payload is published on.
    pub fn topic(&self) -> String {
        match self {
            Payload::MetricBatch { .. } => METRICS_TOPIC.to_owned(),
            other => format!("{TOPIC_PREFIX}{}", other.kind()),
        }
    }
}

pub fn topic(kind: &str) -> String {
    if kind == "metric_batch" {
        METRICS_TOPIC.to_owned()
    } else {
        format!("{TOPIC_PREFIX}{kind}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlMessage {
    /// Absent only before the plan has been distributed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    pub sender_id: String,
    /// Sender's clock; diagnostic only.
    pub sent_at_ms: TimestampMs,
    /// Per-sender sequence number.
    pub seq: u64,
    pub payload: Payload,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape() {
        let m = ControlMessage {
            run_id: Some("r1".into()),
            sender_id: "agent-a".into(),
            sent_at_ms: 5,
            seq: 1,
            payload: Payload::StartPhase { phase: 2 },
        };
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(
            text,
            r#"{"run_id":"r1","sender_id":"agent-a","sent_at_ms":5,"seq":1,"payload":{"kind":"start_phase","body":{"phase":2}}}"#
        );
        assert_eq!(serde_json::from_str::<ControlMessage>(&text).unwrap(), m);
        assert_eq!(m.payload.topic(), "edgewatt/start_phase");
    }

    #[test]
    fn role_matching() {
        let meter = AgentRole::new(RoleKind::MeterAgent, ["plug", "rapl"]);
        assert!(meter.satisfies(&AgentRole::new(RoleKind::MeterAgent, ["plug"])));
        assert!(!meter.satisfies(&AgentRole::new(RoleKind::LoadAgent, ["plug"])));
        assert!(AgentRole::new(RoleKind::SinkAgent, Vec::<String>::new())
            .validate()
            .is_err());
    }
}
