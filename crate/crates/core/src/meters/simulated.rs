use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{MeterError, MeterFamily};
use crate::workload::SimProfile;

/// Ground-truth host power for the simulator, in mW.
///
/// Both families share `idle + poly(load) + turbo + noise`; the hardware
/// family additionally sees `alpha * throughput + c`, the part of the machine
/// that on-chip counters cannot observe. Noise is drawn from `profile.seed`
/// only, so the two families differ by exactly the gap term when they are
/// given the same seed.
pub fn simulated_host_power(
    load: f64,
    throughput_mbps: f64,
    profile: &SimProfile,
    family: MeterFamily,
) -> Result<f64, MeterError> {
    if !(0.0..=1.0).contains(&load) {
        return Err(MeterError::DomainError(format!("load {load} outside [0, 1]")));
    }
    if !(throughput_mbps >= 0.0) {
        return Err(MeterError::DomainError(format!(
            "throughput {throughput_mbps} must be non-negative"
        )));
    }
    let poly = profile.cpu_poly.iter().rev().fold(0.0, |acc, coeff| acc * load + coeff);
    let turbo = if load > profile.turbo_threshold {
        profile.turbo_step_mw
    } else {
        0.0
    };
    let noise = if profile.noise_std_mw > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
        Normal::new(0.0, profile.noise_std_mw)
            .map_err(|e| MeterError::DomainError(e.to_string()))?
            .sample(&mut rng)
    } else {
        0.0
    };
    let mut power = profile.idle_floor_mw + poly + turbo + noise;
    if family == MeterFamily::Hardware {
        power += profile.alpha * throughput_mbps + profile.c;
    }
    Ok(power.max(0.0))
}
