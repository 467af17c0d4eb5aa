use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("profile `{profile}`: {reason}")]
pub struct ProfileError {
    pub profile: String,
    pub reason: String,
}

/// Ground-truth generator parameters for one simulated deployment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimProfile {
    /// Software-visible power with nothing running, mW.
    pub idle_floor_mw: f64,
    /// Degree 0..4 coefficients of the CPU power curve over load in [0, 1], mW.
    pub cpu_poly: [f64; 5],
    /// Hardware/software gap slope, mW per Mbps.
    pub alpha: f64,
    /// Hardware/software gap intercept, mW.
    pub c: f64,
    /// Load above which the turbo step is added.
    pub turbo_threshold: f64,
    #[serde(default)]
    pub turbo_step_mw: f64,
    /// Standard deviation of host power fluctuation, shared by both meters.
    #[serde(default)]
    pub noise_std_mw: f64,
    #[serde(default)]
    pub seed: u64,
    /// CPU load fraction induced per Mbps of forwarded traffic.
    #[serde(default)]
    pub load_per_mbps: f64,
    /// Highest rate the deployment can sustain, if limited.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity_mbps: Option<f64>,
}

/// Shape used by the built-in profiles: a fast rise up to 20% load, a plateau,
/// and a second rise towards full load.
pub const DEFAULT_CPU_POLY: [f64; 5] = [0.0, 30_139.0, -78_653.0, 82_986.0, -28_472.0];

impl SimProfile {
    pub fn validate(&self, name: &str) -> Result<(), ProfileError> {
        let err = |reason: &str| {
            Err(ProfileError {
                profile: name.to_owned(),
                reason: reason.to_owned(),
            })
        };
        if !(self.idle_floor_mw > 0.0) {
            return err("idle_floor_mw must be positive");
        }
        if !(self.noise_std_mw >= 0.0) {
            return err("noise_std_mw must be non-negative");
        }
        if !(self.turbo_threshold > 0.0 && self.turbo_threshold <= 1.0) {
            return err("turbo_threshold must lie in (0, 1]");
        }
        if self
            .cpu_poly
            .iter()
            .chain([&self.alpha, &self.c, &self.turbo_step_mw])
            .any(|v| !v.is_finite())
        {
            return err("coefficients must be finite");
        }
        if !(self.load_per_mbps >= 0.0) {
            return err("load_per_mbps must be non-negative");
        }
        if let Some(cap) = self.capacity_mbps {
            if !(cap > 0.0) {
                return err("capacity_mbps must be positive");
            }
        }
        Ok(())
    }

    fn base(idle: f64, alpha: f64, c: f64, load_per_mbps: f64, capacity: Option<f64>) -> Self {
        Self {
            idle_floor_mw: idle,
            cpu_poly: DEFAULT_CPU_POLY,
            alpha,
            c,
            turbo_threshold: 0.8,
            turbo_step_mw: 1_500.0,
            noise_std_mw: 200.0,
            seed: 1,
            load_per_mbps,
            capacity_mbps: capacity,
        }
    }

    /// Bare metal, gap coefficients from the reference testbed.
    pub fn bare_metal() -> Self {
        Self::base(3_000.0, 4.63977, 7845.0, 0.0005, None)
    }

    /// Virtual machine; cannot sustain more than 700 Mbps.
    pub fn virtual_machine() -> Self {
        Self::base(3_400.0, 9.99886, 7338.0, 0.0012, Some(700.0))
    }

    pub fn container() -> Self {
        Self::base(3_100.0, 6.46334, 7575.0, 0.0007, None)
    }

    /// `bm`, `vm` and `co`.
    pub fn builtin() -> BTreeMap<String, SimProfile> {
        BTreeMap::from([
            ("bm".to_owned(), Self::bare_metal()),
            ("vm".to_owned(), Self::virtual_machine()),
            ("co".to_owned(), Self::container()),
        ])
    }

    pub fn noiseless(mut self) -> Self {
        self.noise_std_mw = 0.0;
        self
    }

    pub fn achievable_mbps(&self, target: f64) -> f64 {
        match self.capacity_mbps {
            Some(cap) => target.min(cap),
            None => target,
        }
    }
}
