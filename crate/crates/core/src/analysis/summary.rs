use serde::{Deserialize, Serialize};

use super::{power_rows, AnalysisError, MeterSelection, PowerRow};
use crate::telemetry::{DeploymentKind, PhaseKind, PhaseOutcome, TraceRun};

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Stat> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Stat { mean, std, n })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub run_id: String,
    pub deployment: DeploymentKind,
    pub phase: usize,
    pub kind: String,
    pub target_mbps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_load: Option<f64>,
    pub outcome: PhaseOutcome,
    pub hw_mw: Option<Stat>,
    pub sw_mw: Option<Stat>,
    pub throughput_mbps: Option<Stat>,
    pub cpu: Option<Stat>,
}

/// One summary per phase mark, over that phase's aligned rows. Each
/// statistic skips rows where its own stream has a gap.
pub fn step_summaries(run: &TraceRun, selection: &MeterSelection) -> Result<Vec<StepSummary>, AnalysisError> {
    let rows = power_rows(run, selection)?;
    Ok(run
        .phase_marks
        .iter()
        .map(|mark| {
            let phase = &run.plan.phases[mark.index];
            let in_phase: Vec<&PowerRow> = rows.iter().filter(|r| r.phase == mark.index).collect();
            let stat = |f: fn(&PowerRow) -> Option<f64>| Stat::of(in_phase.iter().filter_map(|r| f(r)));
            let (kind, target_load) = match phase.kind {
                PhaseKind::Idle => ("idle", None),
                PhaseKind::Traffic { .. } => ("traffic", None),
                PhaseKind::Cpu { target_load } => ("cpu", Some(target_load)),
            };
            StepSummary {
                run_id: run.run_id.clone(),
                deployment: run.plan.deployment.kind,
                phase: mark.index,
                kind: kind.to_owned(),
                target_mbps: phase.kind.target_mbps(),
                target_load,
                outcome: mark.outcome.clone(),
                hw_mw: stat(|r| r.hw_mw),
                sw_mw: stat(|r| r.sw_mw),
                throughput_mbps: stat(|r| r.throughput_mbps),
                cpu: stat(|r| r.cpu),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        let s = Stat::of([2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert_eq!(s.mean, 5.0);
        assert!((s.std - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        assert_eq!(Stat::of([3.0]).unwrap().std, 0.0);
        assert!(Stat::of([]).is_none());
    }
}
