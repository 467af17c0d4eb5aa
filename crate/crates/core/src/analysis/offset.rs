use serde::{Deserialize, Serialize};

use super::{least_squares, power_rows, AnalysisError, AnalysisOptions, FitStats, PowerRow};
use crate::telemetry::TraceRun;

/// Gap between the wall-power and counter-based meters as a linear function
/// of throughput: `hw = sw + alpha * T + c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetModel {
    /// mW per Mbps.
    pub alpha: f64,
    /// mW.
    pub c: f64,
    pub fit_stats: FitStats,
}

impl OffsetModel {
    pub fn predict(&self, p_sw_mw: f64, throughput_mbps: f64) -> f64 {
        predict_hw_power(self, p_sw_mw, throughput_mbps)
    }
}

pub fn predict_hw_power(model: &OffsetModel, p_sw_mw: f64, throughput_mbps: f64) -> f64 {
    p_sw_mw + model.alpha * throughput_mbps + model.c
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetPoint {
    pub throughput_mbps: f64,
    pub diff_mw: f64,
}

/// `(T, hw - sw)` for every row where all three values are present.
pub fn offset_series(rows: &[PowerRow]) -> Vec<OffsetPoint> {
    rows.iter()
        .filter_map(|r| {
            Some(OffsetPoint {
                throughput_mbps: r.throughput_mbps?,
                diff_mw: r.hw_mw? - r.sw_mw?,
            })
        })
        .collect()
}

pub fn fit_offset_model(points: &[OffsetPoint]) -> Result<OffsetModel, AnalysisError> {
    if points.len() < 2 {
        return Err(AnalysisError::DegenerateFit(format!(
            "{} points, need at least 2",
            points.len()
        )));
    }
    let first = points[0].throughput_mbps;
    if points.iter().all(|p| p.throughput_mbps == first) {
        return Err(AnalysisError::DegenerateFit("all throughputs identical".into()));
    }
    // centring T keeps the two columns well separated
    let mean_t = points.iter().map(|p| p.throughput_mbps).sum::<f64>() / points.len() as f64;
    let rows: Vec<Vec<f64>> = points.iter().map(|p| vec![1.0, p.throughput_mbps - mean_t]).collect();
    let y: Vec<f64> = points.iter().map(|p| p.diff_mw).collect();
    let x = least_squares(&rows, &y)?;
    let (alpha, c) = (x[1], x[0] - x[1] * mean_t);
    let fit_stats = FitStats::from_residuals(&y, points.iter().map(|p| alpha * p.throughput_mbps + c));
    Ok(OffsetModel { alpha, c, fit_stats })
}

/// Offset fit over the in-phase rows of one trace.
pub fn fit_run_offset(run: &TraceRun, options: &AnalysisOptions) -> Result<OffsetModel, AnalysisError> {
    let rows: Vec<PowerRow> = power_rows(run, &options.meters)?
        .into_iter()
        .filter(|r| options.include_idle || !run.plan.phases[r.phase].kind.is_idle())
        .collect();
    fit_offset_model(&offset_series(&rows))
}
