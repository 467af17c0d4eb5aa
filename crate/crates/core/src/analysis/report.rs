use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{
    cpu_samples, energy_per_bit, fit_cpu_power_curve, fit_run_offset, offset_series, overhead_report, power_rows,
    step_summaries, AnalysisError, AnalysisOptions, CpuPowerCurve, EnergyPerBit, OffsetModel, OverheadRow, StepSummary,
};
use crate::attribution::{group, GroupRule};
use crate::telemetry::{DeploymentKind, RunStatus, TraceRun};

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Fitted<T> {
    Model(T),
    Failed { error: String },
}

impl<T> From<Result<T, AnalysisError>> for Fitted<T> {
    fn from(r: Result<T, AnalysisError>) -> Self {
        match r {
            Ok(m) => Fitted::Model(m),
            Err(e) => Fitted::Failed { error: e.to_string() },
        }
    }
}

impl<T> Fitted<T> {
    pub fn model(&self) -> Option<&T> {
        match self {
            Fitted::Model(m) => Some(m),
            Fitted::Failed { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub run_id: String,
    pub plan_id: String,
    pub deployment: DeploymentKind,
    pub status: RunStatus,
    pub offset_model: Fitted<OffsetModel>,
    pub cpu_curve: Fitted<CpuPowerCurve>,
    /// Mean attributed power per process group over all windows, mW.
    pub attribution: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyRow {
    pub run_id: String,
    pub deployment: DeploymentKind,
    pub phase: usize,
    pub target_mbps: f64,
    #[serde(flatten)]
    pub energy: EnergyPerBit,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub runs: Vec<RunReport>,
    pub steps: Vec<StepSummary>,
    pub overhead: Vec<OverheadRow>,
    pub energy_per_bit: Vec<EnergyRow>,
}

fn attribution_means(run: &TraceRun, rules: &[GroupRule]) -> Vec<(String, f64)> {
    let mut totals: Vec<(String, f64)> = Vec::new();
    for record in &run.attribution {
        let grouped = group(record, rules);
        for (name, mw) in grouped
            .groups
            .into_iter()
            .chain([("static".to_owned(), grouped.residual_static_mw)])
        {
            match totals.iter_mut().find(|(n, _)| *n == name) {
                Some((_, t)) => *t += mw,
                None => totals.push((name, mw)),
            }
        }
    }
    let n = run.attribution.len().max(1) as f64;
    totals.into_iter().map(|(name, t)| (name, t / n)).collect()
}

/// Everything the report tables need, for one or more traces.
pub fn build_report(
    runs: &[TraceRun],
    options: &AnalysisOptions,
    rules: &[GroupRule],
) -> Result<Report, AnalysisError> {
    let mut report = Report {
        runs: Vec::new(),
        steps: Vec::new(),
        overhead: Vec::new(),
        energy_per_bit: Vec::new(),
    };
    for run in runs {
        let steps = step_summaries(run, &options.meters)?;
        for s in &steps {
            report.energy_per_bit.push(EnergyRow {
                run_id: s.run_id.clone(),
                deployment: s.deployment,
                phase: s.phase,
                target_mbps: s.target_mbps,
                energy: energy_per_bit(s),
            });
        }
        report.steps.extend(steps);
        report.runs.push(RunReport {
            run_id: run.run_id.clone(),
            plan_id: run.plan.plan_id.clone(),
            deployment: run.plan.deployment.kind,
            status: run.status.clone(),
            offset_model: fit_run_offset(run, options).into(),
            cpu_curve: cpu_samples(run, &options.meters)
                .and_then(|s| fit_cpu_power_curve(&s))
                .into(),
            attribution: attribution_means(run, rules),
        });
    }
    report.overhead = overhead_report(&report.steps);
    Ok(report)
}

fn num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.json` plus one CSV per table into `dir`.
pub fn write_report(runs: &[TraceRun], report: &Report, options: &AnalysisOptions, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    fs::write(dir.join("report.json"), json)?;

    write_csv(
        &dir.join("steps.csv"),
        &[
            "run_id",
            "deployment",
            "phase",
            "kind",
            "target_mbps",
            "outcome",
            "n",
            "hw_mean_mw",
            "hw_std_mw",
            "sw_mean_mw",
            "sw_std_mw",
            "throughput_mean_mbps",
            "throughput_std_mbps",
            "cpu_mean",
            "cpu_std",
        ],
        report.steps.iter().map(|s| {
            let outcome = serde_json::to_value(&s.outcome).ok();
            let outcome = outcome
                .as_ref()
                .and_then(|v| v.get("outcome"))
                .and_then(|v| v.as_str())
                .unwrap_or("")
                .to_owned();
            vec![
                s.run_id.clone(),
                s.deployment.short().to_owned(),
                s.phase.to_string(),
                s.kind.clone(),
                s.target_mbps.to_string(),
                outcome,
                s.hw_mw.map_or(0, |v| v.n).to_string(),
                num(s.hw_mw.map(|v| v.mean)),
                num(s.hw_mw.map(|v| v.std)),
                num(s.sw_mw.map(|v| v.mean)),
                num(s.sw_mw.map(|v| v.std)),
                num(s.throughput_mbps.map(|v| v.mean)),
                num(s.throughput_mbps.map(|v| v.std)),
                num(s.cpu.map(|v| v.mean)),
                num(s.cpu.map(|v| v.std)),
            ]
        }),
    )?;

    let mut offset_rows = Vec::new();
    let mut cpu_rows = Vec::new();
    for (run, rr) in runs.iter().zip(&report.runs) {
        let rows = power_rows(run, &options.meters)?;
        for p in offset_series(&rows) {
            let fitted = rr.offset_model.model().map(|m| m.alpha * p.throughput_mbps + m.c);
            offset_rows.push(vec![
                run.run_id.clone(),
                run.plan.deployment.kind.short().to_owned(),
                p.throughput_mbps.to_string(),
                p.diff_mw.to_string(),
                num(fitted),
            ]);
        }
        if let Ok(samples) = cpu_samples(run, &options.meters) {
            for (load, mw) in samples {
                let fitted = rr.cpu_curve.model().map(|c| c.eval(load));
                cpu_rows.push(vec![run.run_id.clone(), load.to_string(), mw.to_string(), num(fitted)]);
            }
        }
    }
    write_csv(
        &dir.join("offset_series.csv"),
        &["run_id", "deployment", "throughput_mbps", "diff_mw", "fitted_mw"],
        offset_rows,
    )?;
    write_csv(
        &dir.join("cpu_power.csv"),
        &["run_id", "load", "power_mw", "fitted_mw"],
        cpu_rows,
    )?;

    write_csv(
        &dir.join("overhead.csv"),
        &["deployment", "target_mbps", "overhead", "std", "status"],
        report.overhead.iter().map(|r| {
            let (o, sd, status) = match &r.status {
                super::OverheadStatus::Available { overhead, std } => {
                    (overhead.to_string(), std.to_string(), "available".to_owned())
                }
                super::OverheadStatus::Unavailable { reason } => (String::new(), String::new(), reason.clone()),
            };
            vec![
                r.deployment.short().to_owned(),
                r.target_mbps.to_string(),
                o,
                sd,
                status,
            ]
        }),
    )?;
    write_csv(
        &dir.join("energy_per_bit.csv"),
        &["run_id", "deployment", "phase", "target_mbps", "nj_per_bit"],
        report.energy_per_bit.iter().map(|e| {
            let v = match e.energy {
                EnergyPerBit::Defined { nj_per_bit } => nj_per_bit.to_string(),
                EnergyPerBit::Undefined => "undefined".to_owned(),
            };
            vec![
                e.run_id.clone(),
                e.deployment.short().to_owned(),
                e.phase.to_string(),
                e.target_mbps.to_string(),
                v,
            ]
        }),
    )?;
    write_csv(
        &dir.join("attribution.csv"),
        &["run_id", "group", "mean_power_mw"],
        report.runs.iter().flat_map(|r| {
            r.attribution
                .iter()
                .map(|(g, mw)| vec![r.run_id.clone(), g.clone(), mw.to_string()])
                .collect::<Vec<_>>()
        }),
    )?;
    Ok(())
}
