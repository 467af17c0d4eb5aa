//! Model fitting and reporting over stored traces.
//!
//! Everything here is a pure function of its inputs.

mod curve;
mod kpi;
mod lstsq;
mod offset;
mod overhead;
mod report;
mod rows;
mod summary;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::AlignError;

pub use curve::{cpu_samples, fit_cpu_power_curve, CpuPowerCurve};
pub use kpi::{energy_per_bit, energy_per_bit_nj, EnergyPerBit};
pub use lstsq::least_squares;
pub use offset::{fit_offset_model, fit_run_offset, offset_series, predict_hw_power, OffsetModel, OffsetPoint};
pub use overhead::{overhead_report, OverheadRow, OverheadStatus};
pub use report::{build_report, write_report, Report, RunReport};
pub use rows::{power_rows, AnalysisOptions, MeterSelection, PowerRow};
pub use summary::{step_summaries, Stat, StepSummary};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("trace has no {0}")]
    MissingStream(String),
    #[error(transparent)]
    Align(#[from] AlignError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    pub residual_rms_mw: f64,
    pub n: usize,
    pub r_squared: f64,
}

impl FitStats {
    pub(crate) fn from_residuals(y: &[f64], fitted: impl Iterator<Item = f64>) -> Self {
        let n = y.len();
        let mean = y.iter().sum::<f64>() / n as f64;
        let ss_res: f64 = y.iter().zip(fitted).map(|(v, f)| (v - f) * (v - f)).sum();
        let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
        Self {
            residual_rms_mw: (ss_res / n as f64).sqrt(),
            n,
            r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
        }
    }
}
