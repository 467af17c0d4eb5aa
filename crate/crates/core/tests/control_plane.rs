use std::time::{Duration, Instant};

use edgewatt::control::{ControllerConfig, FaultPlan};
use edgewatt::session::{simulate, SimulationOptions, LOAD_AGENT, METER_AGENT};
use edgewatt::telemetry::{write_trace_to, Deployment, DeploymentKind, ExperimentPlan, RunStatus};
use edgewatt::workload::SimProfile;

fn plan(phase_s: f64) -> ExperimentPlan {
    ExperimentPlan::traffic_sweep(
        "cp",
        Deployment {
            kind: DeploymentKind::BareMetal,
            software: "sim".into(),
        },
        100.0,
        8,
        phase_s,
    )
}

fn bytes(run: &edgewatt::telemetry::TraceRun) -> Vec<u8> {
    write_trace_to(run, Vec::new()).unwrap()
}

#[test]
fn identical_seeds_give_identical_traces() {
    let p = plan(30.0);
    let a = simulate(&p, &SimProfile::bare_metal(), SimulationOptions::default()).unwrap();
    let b = simulate(&p, &SimProfile::bare_metal(), SimulationOptions::default()).unwrap();
    assert_eq!(a.status, RunStatus::Complete);
    assert_eq!(bytes(&a), bytes(&b));
}

fn fast_controller() -> ControllerConfig {
    let mut c = ControllerConfig::new("");
    c.register_timeout = Duration::from_secs(2);
    c.ready_timeout = Duration::from_millis(150);
    c.tick_timeout = Duration::from_millis(50);
    c.resend_interval = Duration::from_millis(20);
    c
}

#[test]
fn faulty_delivery_never_corrupts() {
    let p = plan(3.0);
    let t0 = Instant::now();
    let mut statuses = [0, 0];
    for seed in 0..40u64 {
        let drop_sender = match seed % 4 {
            0 => Some((METER_AGENT.to_owned(), 5 + seed)),
            1 => Some((LOAD_AGENT.to_owned(), 3 + seed)),
            _ => None,
        };
        let faults = FaultPlan {
            seed,
            duplicate: 0.2,
            hold: 0.3,
            drop_sender,
        };
        let run = simulate(
            &p,
            &SimProfile::bare_metal(),
            SimulationOptions {
                faults: Some(faults),
                controller: Some(fast_controller()),
                ..Default::default()
            },
        )
        .unwrap();
        run.validate().unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        statuses[usize::from(!run.status.is_complete())] += 1;
    }
    assert!(statuses[0] > 0 && statuses[1] > 0, "{statuses:?}");
    assert!(t0.elapsed() < Duration::from_secs(30));
}

#[test]
fn realtime_samples_start_at_the_barrier() {
    let p = ExperimentPlan::traffic_sweep(
        "rt",
        Deployment {
            kind: DeploymentKind::Container,
            software: "sim".into(),
        },
        200.0,
        1,
        2.0,
    );
    let run = simulate(
        &p,
        &SimProfile::container(),
        SimulationOptions {
            realtime: true,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(run.status, RunStatus::Complete);
    assert!(
        run.flags.iter().all(|f| f.kind != "barrier_violation"),
        "{:?}",
        run.flags
    );
    let hw = edgewatt::telemetry::MeterId::new(edgewatt::workload::SimulatedAgent::HARDWARE_METER);
    for mark in &run.phase_marks {
        let n = run
            .host_samples(&hw)
            .filter(|s| s.timestamp_ms > mark.start_ms && s.timestamp_ms <= mark.end_ms)
            .count();
        assert_eq!(n, 2, "phase {}", mark.index);
    }
    assert!(run.host_metadata.keys().any(|k| k.starts_with("sampler_overhead_mw/")));
}
