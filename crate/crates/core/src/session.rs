//! Wiring that runs a whole experiment in one process: a broker, the
//! controller and simulated agents on a shared clock.

use std::sync::Arc;
use std::thread;

use crate::clock::{CancelToken, Clock, SystemClock, VirtualClock};
use crate::control::{
    run_agent, run_controller, AgentConfig, AgentDrivers, AgentExit, AgentRole, Broker, ControlError, ControllerConfig,
    FaultPlan, FaultyBroker, InProcessBroker, RoleKind,
};
use crate::telemetry::{ExperimentPlan, PhaseKind, TraceRun};
use crate::workload::{SimProfile, SimulatedAgent};

/// Start of virtual time for compressed runs, so traces do not depend on
/// when they were produced.
pub const VIRTUAL_EPOCH_MS: i64 = 1_700_000_000_000;

pub const METER_AGENT: &str = "sim-meter";
pub const LOAD_AGENT: &str = "sim-load";

#[derive(Clone, Debug, Default)]
pub struct SimulationOptions {
    /// Overrides the profile's seed.
    pub seed: Option<u64>,
    pub run_id: Option<String>,
    /// Run on the wall clock instead of compressed virtual time.
    pub realtime: bool,
    /// Fault injection between agents and the broker.
    pub faults: Option<FaultPlan>,
    pub controller: Option<ControllerConfig>,
}

/// Roles a plan needs: a meter agent and a load agent able to drive every
/// non-idle phase kind.
pub fn expected_roles(plan: &ExperimentPlan) -> Vec<AgentRole> {
    let mut load = Vec::new();
    if plan.phases.iter().any(|p| matches!(p.kind, PhaseKind::Traffic { .. })) {
        load.push("traffic");
    }
    if plan.phases.iter().any(|p| matches!(p.kind, PhaseKind::Cpu { .. })) {
        load.push("cpu");
    }
    let mut roles = vec![AgentRole::new(RoleKind::MeterAgent, ["power"])];
    if !load.is_empty() {
        roles.push(AgentRole::new(RoleKind::LoadAgent, load));
    }
    roles
}

pub fn simulate(
    plan: &ExperimentPlan,
    profile: &SimProfile,
    options: SimulationOptions,
) -> Result<TraceRun, ControlError> {
    let mut profile = profile.clone();
    if let Some(seed) = options.seed {
        profile.seed = seed;
    }
    let run_id = options
        .run_id
        .clone()
        .unwrap_or_else(|| format!("{}-s{}", plan.plan_id, profile.seed));
    let clock: Arc<dyn Clock> = if options.realtime {
        Arc::new(SystemClock)
    } else {
        VirtualClock::driven(VIRTUAL_EPOCH_MS)
    };
    let hub: Arc<dyn Broker> = InProcessBroker::new();
    let (agent_side, controller_side): (Arc<dyn Broker>, Arc<dyn Broker>) = match options.faults.clone() {
        Some(plan) => {
            let ours = FaultPlan {
                seed: plan.seed.wrapping_add(1),
                drop_sender: None,
                ..plan.clone()
            };
            (
                FaultyBroker::new(Arc::clone(&hub), plan),
                FaultyBroker::new(Arc::clone(&hub), ours),
            )
        }
        None => (Arc::clone(&hub), Arc::clone(&hub)),
    };

    let sim = SimulatedAgent::new(profile.clone());
    let mut samplers = sim.meters();
    samplers.extend(sim.collectors());
    let cancel = CancelToken::new();
    let agents = [
        (
            AgentConfig::new(
                METER_AGENT,
                AgentRole::new(RoleKind::MeterAgent, ["power", "throughput", "cpu", "process"]),
            ),
            AgentDrivers {
                samplers,
                loads: Vec::new(),
            },
        ),
        (
            AgentConfig::new(LOAD_AGENT, AgentRole::new(RoleKind::LoadAgent, ["traffic", "cpu"])),
            AgentDrivers {
                samplers: Vec::new(),
                loads: vec![sim.load_driver()],
            },
        ),
    ];
    let handles: Vec<thread::JoinHandle<AgentExit>> = agents
        .into_iter()
        .map(|(mut config, drivers)| {
            config.run_id = Some(run_id.clone());
            let (broker, clock, cancel) = (Arc::clone(&agent_side), Arc::clone(&clock), cancel.clone());
            thread::spawn(move || run_agent(config, broker, drivers, clock, cancel))
        })
        .collect();

    let mut config = options.controller.clone().unwrap_or_else(|| ControllerConfig::new(""));
    config.run_id = run_id;
    config.host_metadata.insert("seed".into(), profile.seed.to_string());
    config.host_metadata.insert(
        "mode".into(),
        if options.realtime { "realtime" } else { "compressed" }.into(),
    );
    if let Ok(p) = toml::to_string(&profile) {
        config.host_metadata.insert("sim_profile".into(), p);
    }
    let result = run_controller(
        plan,
        controller_side.as_ref(),
        &expected_roles(plan),
        clock.as_ref(),
        config,
        &cancel,
    );
    cancel.cancel();
    for h in handles {
        match h.join() {
            Ok(exit) => log::debug!("agent exited: {exit:?}"),
            Err(_) => log::error!("agent thread panicked"),
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::{Deployment, DeploymentKind, PhaseOutcome, RunStatus};

    fn sweep(kind: DeploymentKind, phase_s: f64) -> ExperimentPlan {
        ExperimentPlan::traffic_sweep(
            "t",
            Deployment {
                kind,
                software: "sim".into(),
            },
            100.0,
            8,
            phase_s,
        )
    }

    #[test]
    fn compressed_sweep_completes() {
        let plan = sweep(DeploymentKind::BareMetal, 5.0);
        let run = simulate(&plan, &SimProfile::bare_metal(), SimulationOptions::default()).unwrap();
        assert_eq!(run.status, RunStatus::Complete, "{:?}", run.flags);
        assert_eq!(run.phase_marks.len(), 9);
        let hw = run.host_samples(&SimulatedAgent::HARDWARE_METER.into()).count();
        assert_eq!(hw, 45);
        run.validate().unwrap();
    }

    #[test]
    fn vm_capacity_marks_last_step() {
        let plan = sweep(DeploymentKind::VirtualMachine, 2.0);
        let run = simulate(&plan, &SimProfile::virtual_machine(), SimulationOptions::default()).unwrap();
        assert!(matches!(
            run.phase_marks[8].outcome,
            PhaseOutcome::TargetUnreachable { .. }
        ));
        assert_eq!(run.phase_marks[7].outcome, PhaseOutcome::Completed);
    }
}
