//! Software meter over cumulative energy counters.
//!
//! Counters are read from a directory laid out like the kernel powercap
//! interface: one sub-directory per zone holding `name`, `energy_uj` and
//! `max_energy_range_uj`. Tests point this at fixture directories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MeterError, SampleError, Sampler};
use crate::clock::Clock;
use crate::telemetry::{MeterDescriptor, MeterId, PowerSample, Reading, Scope, TimestampMs};

/// Readings above this are treated as a double wrap or a corrupt counter.
pub const DEFAULT_CEILING_MW: f64 = 500_000.0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyCounterReading {
    pub timestamp_ms: TimestampMs,
    pub domain: String,
    /// Cumulative microjoules, wrapping at `counter_max_uj`.
    pub energy_uj: u64,
    pub counter_max_uj: u64,
}

/// Energy consumed between two readings of the same counter, assuming at
/// most one wrap.
pub fn counter_delta(prev: u64, curr: u64, max: u64) -> u64 {
    let m = u128::from(max);
    ((u128::from(curr) + m - u128::from(prev)) % m) as u64
}

/// Average power over the interval between two counter readings.
///
/// µJ per ms is numerically mW, so no unit factor appears.
pub fn power_from_counters(
    source: &MeterId,
    prev: &EnergyCounterReading,
    curr: &EnergyCounterReading,
    ceiling_mw: f64,
) -> Result<PowerSample, MeterError> {
    if prev.domain != curr.domain {
        return Err(MeterError::CounterMismatch(format!(
            "domain `{}` vs `{}`",
            prev.domain, curr.domain
        )));
    }
    if prev.counter_max_uj != curr.counter_max_uj || curr.counter_max_uj == 0 {
        return Err(MeterError::CounterMismatch(format!(
            "counter range {} vs {}",
            prev.counter_max_uj, curr.counter_max_uj
        )));
    }
    for r in [prev, curr] {
        if r.energy_uj >= r.counter_max_uj {
            return Err(MeterError::CounterMismatch(format!(
                "energy {} outside counter range {}",
                r.energy_uj, r.counter_max_uj
            )));
        }
    }
    let dt = curr.timestamp_ms - prev.timestamp_ms;
    if dt <= 0 {
        return Err(MeterError::InvalidInterval(dt));
    }
    let de = counter_delta(prev.energy_uj, curr.energy_uj, curr.counter_max_uj);
    let power_mw = de as f64 / dt as f64;
    if power_mw > ceiling_mw {
        return Err(MeterError::ImplausibleReading { power_mw, ceiling_mw });
    }
    Ok(PowerSample::new(
        curr.timestamp_ms,
        source.clone(),
        Scope::HardwareDomain {
            name: curr.domain.clone(),
        },
        power_mw,
    ))
}

#[derive(Clone, Debug)]
struct Zone {
    dir: PathBuf,
    name: String,
    max_uj: u64,
}

fn read_u64(path: &Path) -> Result<u64, MeterError> {
    let text = fs::read_to_string(path)?;
    text.trim().parse().map_err(|_| MeterError::MeterProtocolError {
        reason: format!("{} is not an integer", path.display()),
        raw: text.clone(),
    })
}

/// Reads every zone under `root` and reports per-domain power plus their
/// sum as the host figure.
pub struct CounterMeter {
    descriptor: MeterDescriptor,
    root: PathBuf,
    domains: Option<Vec<String>>,
    ceiling_mw: f64,
    zones: Vec<Zone>,
    prev: Vec<Option<EnergyCounterReading>>,
}

impl CounterMeter {
    pub fn new(id: impl Into<String>, root: impl Into<PathBuf>, domains: Option<Vec<String>>) -> Self {
        Self {
            descriptor: MeterDescriptor::software_counter(id),
            root: root.into(),
            domains,
            ceiling_mw: DEFAULT_CEILING_MW,
            zones: Vec::new(),
            prev: Vec::new(),
        }
    }

    pub fn with_ceiling(mut self, ceiling_mw: f64) -> Self {
        self.ceiling_mw = ceiling_mw;
        self
    }

    fn discover(&mut self) -> Result<(), MeterError> {
        let mut zones = Vec::new();
        let mut entries: Vec<PathBuf> = fs::read_dir(&self.root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("energy_uj").is_file())
            .collect();
        entries.sort();
        for dir in entries {
            let name = fs::read_to_string(dir.join("name"))
                .map(|s| s.trim().to_owned())
                .unwrap_or_else(|_| dir.file_name().unwrap_or_default().to_string_lossy().into_owned());
            if let Some(wanted) = &self.domains {
                if !wanted.contains(&name) {
                    continue;
                }
            }
            let max_uj = read_u64(&dir.join("max_energy_range_uj"))?;
            zones.push(Zone { dir, name, max_uj });
        }
        if zones.is_empty() {
            return Err(MeterError::MeterUnavailable(format!(
                "no energy counters under {}",
                self.root.display()
            )));
        }
        self.prev = vec![None; zones.len()];
        self.zones = zones;
        Ok(())
    }

    fn read_zone(zone: &Zone, now: TimestampMs) -> Result<EnergyCounterReading, MeterError> {
        Ok(EnergyCounterReading {
            timestamp_ms: now,
            domain: zone.name.clone(),
            energy_uj: read_u64(&zone.dir.join("energy_uj"))?,
            counter_max_uj: zone.max_uj,
        })
    }
}

impl Sampler for CounterMeter {
    fn name(&self) -> &str {
        self.descriptor.meter_id.as_str()
    }

    fn descriptors(&self) -> Vec<MeterDescriptor> {
        vec![self.descriptor.clone()]
    }

    fn prime(&mut self, clock: &dyn Clock) -> Result<(), SampleError> {
        self.discover()?;
        let now = clock.now_ms();
        for (i, zone) in self.zones.iter().enumerate() {
            self.prev[i] = Some(Self::read_zone(zone, now)?);
        }
        Ok(())
    }

    fn sample(&mut self, clock: &dyn Clock) -> Result<Vec<Reading>, SampleError> {
        if self.zones.is_empty() {
            self.prime(clock)?;
            return Err(SampleError("energy counters primed; no interval yet".into()));
        }
        let now = clock.now_ms();
        let mut out = Vec::with_capacity(self.zones.len() + 1);
        let mut total = 0.0;
        let mut failure = None;
        for (i, zone) in self.zones.iter().enumerate() {
            let curr = Self::read_zone(zone, now)?;
            let result = match &self.prev[i] {
                Some(prev) => power_from_counters(&self.descriptor.meter_id, prev, &curr, self.ceiling_mw),
                None => Err(MeterError::MeterUnavailable("no previous reading".into())),
            };
            self.prev[i] = Some(curr);
            match result {
                Ok(sample) => {
                    total += sample.power_mw;
                    out.push(Reading::Power(sample));
                }
                Err(e) => failure = Some(e),
            }
        }
        if let Some(e) = failure {
            return Err(e.into());
        }
        out.push(Reading::Power(PowerSample::new(
            now,
            self.descriptor.meter_id.clone(),
            Scope::Host,
            total,
        )));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{CancelToken, VirtualClock};

    fn reading(t: i64, e: u64, max: u64) -> EnergyCounterReading {
        EnergyCounterReading {
            timestamp_ms: t,
            domain: "package-0".into(),
            energy_uj: e,
            counter_max_uj: max,
        }
    }

    fn power(prev: &EnergyCounterReading, curr: &EnergyCounterReading) -> Result<f64, MeterError> {
        power_from_counters(&"rapl".into(), prev, curr, DEFAULT_CEILING_MW).map(|s| s.power_mw)
    }

    #[test]
    fn two_joules_per_second_is_two_watts() {
        let p = power(&reading(0, 1_000_000, u64::MAX), &reading(1000, 3_000_000, u64::MAX)).unwrap();
        assert_eq!(p, 2000.0);
    }

    #[test]
    fn unchanged_counter_is_zero() {
        let p = power(&reading(0, 42, 1000), &reading(1000, 42, 1000)).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn wraparound_is_modular() {
        let max = 10_000_000;
        let p = power(&reading(0, 9_600_000, max), &reading(1000, 600_000, max)).unwrap();
        assert_eq!(p, 1000.0);
    }

    #[test]
    fn non_positive_interval_is_rejected() {
        assert_eq!(
            power(&reading(1000, 1, 10), &reading(1000, 2, 10)),
            Err(MeterError::InvalidInterval(0))
        );
    }

    #[test]
    fn implausible_reading_trips_ceiling() {
        let max = 1_000_000_000_000;
        let err = power(&reading(0, 0, max), &reading(1000, 600_000_000, max)).unwrap_err();
        assert!(matches!(err, MeterError::ImplausibleReading { .. }));
    }

    #[test]
    fn scope_is_hardware_domain() {
        let s = power_from_counters(&"rapl".into(), &reading(0, 0, 100), &reading(10, 10, 100), 1e9).unwrap();
        assert_eq!(
            s.scope,
            Scope::HardwareDomain {
                name: "package-0".into()
            }
        );
    }

    fn write_zone(root: &Path, dir: &str, name: &str, energy: u64, max: u64) {
        let z = root.join(dir);
        fs::create_dir_all(&z).unwrap();
        fs::write(z.join("name"), format!("{name}\n")).unwrap();
        fs::write(z.join("energy_uj"), format!("{energy}\n")).unwrap();
        fs::write(z.join("max_energy_range_uj"), format!("{max}\n")).unwrap();
    }

    #[test]
    fn fixture_directory_meter() {
        let tmp = tempfile::tempdir().unwrap();
        write_zone(tmp.path(), "intel-rapl:0", "package-0", 1_000_000, 262_143_328_850);
        write_zone(tmp.path(), "intel-rapl:1", "dram", 500_000, 65_712_999_613);
        let clock = VirtualClock::auto(0);
        let mut meter = CounterMeter::new("rapl", tmp.path(), None);
        meter.prime(clock.as_ref()).unwrap();

        write_zone(tmp.path(), "intel-rapl:0", "package-0", 4_000_000, 262_143_328_850);
        write_zone(tmp.path(), "intel-rapl:1", "dram", 1_500_000, 65_712_999_613);
        clock.sleep_until(1000, &CancelToken::new());
        let out = meter.sample(clock.as_ref()).unwrap();
        let powers: Vec<(Scope, f64)> = out
            .into_iter()
            .map(|r| match r {
                Reading::Power(p) => (p.scope, p.power_mw),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(
            powers[0],
            (
                Scope::HardwareDomain {
                    name: "package-0".into()
                },
                3000.0
            )
        );
        assert_eq!(powers[1], (Scope::HardwareDomain { name: "dram".into() }, 1000.0));
        assert_eq!(powers[2], (Scope::Host, 4000.0));
    }

    #[test]
    fn domain_filter_and_missing_root() {
        let tmp = tempfile::tempdir().unwrap();
        write_zone(tmp.path(), "intel-rapl:0", "package-0", 1, 100);
        write_zone(tmp.path(), "intel-rapl:1", "dram", 1, 100);
        let clock = VirtualClock::auto(0);
        let mut meter = CounterMeter::new("rapl", tmp.path(), Some(vec!["dram".into()]));
        meter.prime(clock.as_ref()).unwrap();
        assert_eq!(meter.zones.len(), 1);

        let mut missing = CounterMeter::new("rapl", tmp.path().join("nope"), None);
        assert!(missing.prime(clock.as_ref()).is_err());
    }
}
