use serde::{Deserialize, Serialize};

use super::StepSummary;
use crate::telemetry::{DeploymentKind, PhaseOutcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum OverheadStatus {
    Available { overhead: f64, std: f64 },
    Unavailable { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverheadRow {
    pub deployment: DeploymentKind,
    pub target_mbps: f64,
    #[serde(flatten)]
    pub status: OverheadStatus,
}

impl OverheadRow {
    pub fn overhead(&self) -> Option<f64> {
        match self.status {
            OverheadStatus::Available { overhead, .. } => Some(overhead),
            OverheadStatus::Unavailable { .. } => None,
        }
    }
}

fn usable(s: &StepSummary) -> Result<(f64, f64), String> {
    if let PhaseOutcome::TargetUnreachable { achieved_mbps } = s.outcome {
        return Err(format!("target unreachable, achieved {achieved_mbps} Mbps"));
    }
    match s.hw_mw {
        Some(stat) if stat.mean > 0.0 => Ok((stat.mean, stat.std)),
        _ => Err("no hardware power samples".into()),
    }
}

/// Relative hardware-power overhead of every non-bare-metal step against
/// the bare-metal step at the same target: `mean(D)/mean(BM) - 1`. The std
/// is propagated to first order from both steps' sample stds.
pub fn overhead_report(summaries: &[StepSummary]) -> Vec<OverheadRow> {
    let mut rows = Vec::new();
    for s in summaries.iter().filter(|s| s.kind == "traffic") {
        if s.deployment == DeploymentKind::BareMetal {
            continue;
        }
        let baseline = summaries.iter().find(|b| {
            b.deployment == DeploymentKind::BareMetal && b.kind == "traffic" && b.target_mbps == s.target_mbps
        });
        let status = match baseline {
            None => OverheadStatus::Unavailable {
                reason: "no bare-metal step at this target".into(),
            },
            Some(b) => match (usable(s), usable(b)) {
                (Ok((m, sd)), Ok((bm, bsd))) => {
                    let ratio = m / bm;
                    OverheadStatus::Available {
                        overhead: ratio - 1.0,
                        std: ratio * ((sd / m).powi(2) + (bsd / bm).powi(2)).sqrt(),
                    }
                }
                (Err(reason), _) => OverheadStatus::Unavailable { reason },
                (_, Err(reason)) => OverheadStatus::Unavailable {
                    reason: format!("baseline: {reason}"),
                },
            },
        };
        rows.push(OverheadRow {
            deployment: s.deployment,
            target_mbps: s.target_mbps,
            status,
        });
    }
    rows.sort_by(|a, b| {
        (a.deployment, a.target_mbps)
            .partial_cmp(&(b.deployment, b.target_mbps))
            .unwrap()
    });
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::Stat;

    fn step(d: DeploymentKind, target: f64, hw: f64) -> StepSummary {
        StepSummary {
            run_id: d.short().into(),
            deployment: d,
            phase: 1,
            kind: "traffic".into(),
            target_mbps: target,
            target_load: None,
            outcome: PhaseOutcome::Completed,
            hw_mw: Some(Stat {
                mean: hw,
                std: 0.0,
                n: 30,
            }),
            sw_mw: None,
            throughput_mbps: None,
            cpu: None,
        }
    }

    #[test]
    fn ratios() {
        let rows = overhead_report(&[
            step(DeploymentKind::BareMetal, 700.0, 12_000.0),
            step(DeploymentKind::VirtualMachine, 700.0, 21_600.0),
            step(DeploymentKind::BareMetal, 800.0, 16_000.0),
            step(DeploymentKind::Container, 800.0, 20_000.0),
        ]);
        assert_eq!(rows.len(), 2);
        assert!((rows[0].overhead().unwrap() - 0.8).abs() < 1e-12);
        assert!((rows[1].overhead().unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn identical_is_zero_and_missing_baseline_unavailable() {
        let rows = overhead_report(&[
            step(DeploymentKind::BareMetal, 100.0, 9_000.0),
            step(DeploymentKind::Container, 100.0, 9_000.0),
            step(DeploymentKind::Container, 200.0, 9_500.0),
        ]);
        assert_eq!(rows[0].overhead(), Some(0.0));
        assert!(matches!(rows[1].status, OverheadStatus::Unavailable { .. }));
    }

    #[test]
    fn propagated_std() {
        let mut bm = step(DeploymentKind::BareMetal, 100.0, 10_000.0);
        bm.hw_mw.as_mut().unwrap().std = 100.0;
        let mut co = step(DeploymentKind::Container, 100.0, 20_000.0);
        co.hw_mw.as_mut().unwrap().std = 200.0;
        match &overhead_report(&[bm, co])[0].status {
            OverheadStatus::Available { std, .. } => assert!((std - 2.0 * 2f64.sqrt() * 0.01).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unreachable_step_is_unavailable() {
        let mut vm = step(DeploymentKind::VirtualMachine, 800.0, 30_000.0);
        vm.outcome = PhaseOutcome::TargetUnreachable { achieved_mbps: 700.0 };
        let rows = overhead_report(&[step(DeploymentKind::BareMetal, 800.0, 16_000.0), vm]);
        assert!(rows[0].overhead().is_none());
    }
}
