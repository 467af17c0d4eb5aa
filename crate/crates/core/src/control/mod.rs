//! Control plane: the message vocabulary, brokers that carry it, and the
//! controller and agent activities that run an experiment over them.

mod agent;
mod broker;
mod codec;
mod controller;
mod faults;
mod message;
mod tcp;

use thiserror::Error;

use crate::telemetry::InvariantError;

pub use agent::{run_agent, AgentConfig, AgentDrivers, AgentExit};
pub use broker::{Broker, BrokerError, BrokerEvent, InProcessBroker, Subscription};
pub use codec::{read_frame, write_frame, Frame, MAX_FRAME};
pub use controller::{run_controller, ControllerConfig};
pub use faults::{FaultPlan, FaultyBroker};
pub use message::{
    topic, AgentRole, BatchGap, ControlMessage, Health, Payload, RoleKind, SamplerCost, METRICS_TOPIC, TOPIC_PREFIX,
};
pub use tcp::{TcpBroker, TcpBrokerServer};

/// Environment variable naming the broker address for agents and the controller.
pub const BROKER_ENV: &str = "EDGEWATT_BROKER";

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("invalid plan: {0}")]
    InvalidPlan(#[from] InvariantError),
    #[error("no agents were requested for this run")]
    NoExpectedAgents,
    #[error(transparent)]
    Broker(#[from] BrokerError),
}
