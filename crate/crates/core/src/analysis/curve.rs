use serde::{Deserialize, Serialize};

use super::{least_squares, power_rows, AnalysisError, FitStats, MeterSelection};
use crate::telemetry::{PhaseKind, TraceRun};

/// Quartic fit of power against CPU load fraction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpuPowerCurve {
    /// Degree 0..4, mW.
    pub coefficients: [f64; 5],
    pub fit_stats: FitStats,
}

impl CpuPowerCurve {
    pub fn eval(&self, load: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * load + c)
    }
}

pub fn fit_cpu_power_curve(samples: &[(f64, f64)]) -> Result<CpuPowerCurve, AnalysisError> {
    if let Some(&(load, _)) = samples.iter().find(|(l, _)| !(0.0..=1.0).contains(l)) {
        return Err(AnalysisError::InvalidInput(format!("load {load} outside [0, 1]")));
    }
    let mut loads: Vec<f64> = samples.iter().map(|s| s.0).collect();
    loads.sort_by(f64::total_cmp);
    loads.dedup();
    if loads.len() < 5 {
        return Err(AnalysisError::DegenerateFit(format!(
            "{} distinct loads, need at least 5",
            loads.len()
        )));
    }
    let rows: Vec<Vec<f64>> = samples
        .iter()
        .map(|&(l, _)| (0..5).map(|k| l.powi(k)).collect())
        .collect();
    let y: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let x = least_squares(&rows, &y)?;
    let coefficients = [x[0], x[1], x[2], x[3], x[4]];
    let curve = CpuPowerCurve {
        coefficients,
        fit_stats: FitStats {
            residual_rms_mw: 0.0,
            n: 0,
            r_squared: 0.0,
        },
    };
    let fit_stats = FitStats::from_residuals(&y, samples.iter().map(|s| curve.eval(s.0)));
    Ok(CpuPowerCurve { fit_stats, ..curve })
}

/// `(cpu load, hardware power)` pairs from the CPU phases of a trace, or
/// from every phase when it has none.
pub fn cpu_samples(run: &TraceRun, selection: &MeterSelection) -> Result<Vec<(f64, f64)>, AnalysisError> {
    let rows = power_rows(run, selection)?;
    let has_cpu_phases = run.plan.phases.iter().any(|p| matches!(p.kind, PhaseKind::Cpu { .. }));
    Ok(rows
        .iter()
        .filter(|r| !has_cpu_phases || matches!(run.plan.phases[r.phase].kind, PhaseKind::Cpu { .. }))
        .filter_map(|r| Some((r.cpu?, r.hw_mw?)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(coeffs: [f64; 5], n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let l = i as f64 / (n - 1) as f64;
                (l, coeffs.iter().rev().fold(0.0, |a, c| a * l + c))
            })
            .collect()
    }

    #[test]
    fn recovers_generator() {
        let want = [3.0, -1.0, 2.0, 0.0, 5.0];
        let curve = fit_cpu_power_curve(&grid(want, 20)).unwrap();
        for (got, want) in curve.coefficients.iter().zip(want) {
            assert!((got - want).abs() <= 1e-6 * want.abs().max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn constant_power() {
        let samples: Vec<(f64, f64)> = (0..11).map(|i| (i as f64 / 10.0, 4200.0)).collect();
        let c = fit_cpu_power_curve(&samples).unwrap();
        assert!((c.coefficients[0] - 4200.0).abs() < 1e-6);
        assert!(c.coefficients[1..].iter().all(|v| v.abs() < 1e-5));
    }

    #[test]
    fn four_distinct_loads_are_degenerate() {
        let samples: Vec<(f64, f64)> = (0..20).map(|i| ((i % 4) as f64 / 4.0, 1.0)).collect();
        assert!(matches!(
            fit_cpu_power_curve(&samples),
            Err(AnalysisError::DegenerateFit(_))
        ));
        assert!(fit_cpu_power_curve(&[(1.5, 0.0); 6]).is_err());
    }
}
