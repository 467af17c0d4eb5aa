use serde::{Deserialize, Serialize};

use super::StepSummary;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EnergyPerBit {
    Defined {
        nj_per_bit: f64,
    },
    /// No traffic was carried.
    Undefined,
}

/// Nanojoules per bit from a mean power in mW and a rate in Mbps.
pub fn energy_per_bit_nj(power_mw: f64, throughput_mbps: f64) -> Option<f64> {
    if !(throughput_mbps > 0.0) || !power_mw.is_finite() {
        return None;
    }
    let joules_per_bit = (power_mw / 1000.0) / (throughput_mbps * 1e6);
    Some(joules_per_bit * 1e9)
}

pub fn energy_per_bit(summary: &StepSummary) -> EnergyPerBit {
    match (summary.hw_mw, summary.throughput_mbps) {
        (Some(hw), Some(t)) => match energy_per_bit_nj(hw.mean, t.mean) {
            Some(nj_per_bit) => EnergyPerBit::Defined { nj_per_bit },
            None => EnergyPerBit::Undefined,
        },
        _ => EnergyPerBit::Undefined,
    }
}
