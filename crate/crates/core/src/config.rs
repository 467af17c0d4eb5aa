//! The run configuration file.
//!
//! One TOML document holds everything a run needs: the plan (inline or by
//! path), broker settings, the drivers of an agent, simulation profiles,
//! attribution groups, output location and analysis options. Unknown keys are
//! rejected and everything is validated before any activity starts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::analysis::AnalysisOptions;
use crate::attribution::GroupRule;
use crate::collectors::{InterfaceSpec, NetSampler, ProcStatSampler, ProcessAttributionSampler, ProcessScanner};
use crate::control::{AgentConfig, AgentDrivers, AgentRole, ControllerConfig, RoleKind, BROKER_ENV};
use crate::meters::{CounterMeter, PlugClient, Sampler};
use crate::telemetry::ExperimentPlan;
use crate::workload::{CpuStressDriver, ExternalTrafficDriver, GeneratorConfig, LoadDriver, SettleRule, SimProfile};

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    /// Dotted path of the offending key, when there is one.
    pub field: Option<String>,
    pub message: String,
}

impl ConfigError {
    pub fn at(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: Some(field.into()),
            message: message.into(),
        }
    }

    pub fn general(message: impl Into<String>) -> Self {
        Self {
            field: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.field {
            Some(field) => write!(f, "{field}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<ExperimentPlan>,
    /// Plan file, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan_file: Option<PathBuf>,
    #[serde(default)]
    pub broker: BrokerSettings,
    /// Agents the controller waits for before starting.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agents: Vec<AgentRole>,
    /// Extra or overriding simulation profiles; `bm`, `vm` and `co` are built in.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub profiles: BTreeMap<String, SimProfile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<GroupRule>,
    #[serde(default)]
    pub output: OutputSettings,
    #[serde(default)]
    pub analysis: AnalysisOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BrokerSettings {
    /// `host:port` of the TCP broker. Overridden by `EDGEWATT_BROKER`.
    pub address: String,
    pub register_timeout_s: f64,
    pub ready_timeout_s: f64,
    pub tick_timeout_s: f64,
    pub liveness_ticks: u32,
}

impl Default for BrokerSettings {
    fn default() -> Self {
        Self {
            address: "127.0.0.1:7878".into(),
            register_timeout_s: 30.0,
            ready_timeout_s: 60.0,
            tick_timeout_s: 5.0,
            liveness_ticks: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSettings {
    pub dir: PathBuf,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    pub id: String,
    pub role: RoleKind,
    /// Defaults to what the configured drivers provide.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capabilities: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plug: Option<PlugSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rapl: Option<RaplSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub net: Option<NetSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpu: Option<CpuSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic: Option<GeneratorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stress: Option<StressSettings>,
    #[serde(default)]
    pub settle: SettleSettings,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlugSettings {
    #[serde(default = "plug_id")]
    pub id: String,
    /// `host:port` of the plug.
    pub endpoint: String,
    #[serde(default = "plug_timeout")]
    pub timeout_ms: u64,
}

fn plug_id() -> String {
    "plug".into()
}

fn plug_timeout() -> u64 {
    800
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaplSettings {
    #[serde(default = "rapl_id")]
    pub id: String,
    #[serde(default = "rapl_root")]
    pub root: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domains: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ceiling_mw: Option<f64>,
    /// Static power left unattributed; enables per-process attribution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idle_floor_mw: Option<f64>,
    #[serde(default = "proc_root")]
    pub proc_root: PathBuf,
}

fn rapl_id() -> String {
    "rapl".into()
}

fn rapl_root() -> PathBuf {
    "/sys/class/powercap".into()
}

fn proc_root() -> PathBuf {
    "/proc".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSettings {
    #[serde(default = "net_root")]
    pub root: PathBuf,
    pub interfaces: Vec<InterfaceSpec>,
}

fn net_root() -> PathBuf {
    "/sys/class/net".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpuSettings {
    #[serde(default = "cpu_source")]
    pub source: String,
    #[serde(default = "proc_root")]
    pub proc_root: PathBuf,
}

fn cpu_source() -> String {
    "proc-stat".into()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StressSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cores: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SettleSettings {
    pub tolerance: f64,
    pub consecutive: u32,
    pub interval_ms: u64,
    pub max_checks: u32,
}

impl Default for SettleSettings {
    fn default() -> Self {
        let r = SettleRule::default();
        Self {
            tolerance: r.tolerance,
            consecutive: r.consecutive,
            interval_ms: r.interval_ms,
            max_checks: r.max_checks,
        }
    }
}

impl From<&SettleSettings> for SettleRule {
    fn from(s: &SettleSettings) -> Self {
        SettleRule {
            tolerance: s.tolerance,
            consecutive: s.consecutive,
            interval_ms: s.interval_ms,
            max_checks: s.max_checks,
        }
    }
}

fn toml_error(path: &Path, e: toml::de::Error) -> ConfigError {
    let message = e.message().to_owned();
    match e.span() {
        Some(span) => ConfigError::general(format!(
            "{}: {message} (bytes {}..{})",
            path.display(),
            span.start,
            span.end
        )),
        None => ConfigError::general(format!("{}: {message}", path.display())),
    }
}

pub fn load_plan(path: &Path) -> Result<ExperimentPlan, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::general(format!("cannot read plan {}: {e}", path.display())))?;
    let plan: ExperimentPlan = toml::from_str(&text).map_err(|e| toml_error(path, e))?;
    plan.validate().map_err(|e| plan_error(&e))?;
    Ok(plan)
}

fn plan_error(e: &crate::telemetry::InvariantError) -> ConfigError {
    match e.field_name() {
        Some(field) => ConfigError::at(format!("plan.{field}"), e.to_string()),
        None => ConfigError::at("plan", e.to_string()),
    }
}

impl RunConfig {
    /// Parses and resolves `plan_file` relative to the config's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::general(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig = toml::from_str(&text).map_err(|e| toml_error(path, e))?;
        if let Some(file) = &config.plan_file {
            if file.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                config.plan_file = Some(base.join(file));
            }
        }
        Ok(config)
    }

    /// Applies `--plan`, which takes precedence over the file's own plan.
    pub fn with_plan_file(mut self, plan: Option<PathBuf>) -> Self {
        if let Some(p) = plan {
            self.plan = None;
            self.plan_file = Some(p);
        }
        self
    }

    pub fn broker_address(&self) -> String {
        std::env::var(BROKER_ENV)
            .ok()
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| self.broker.address.clone())
    }

    /// Inlines the plan and checks everything a controller run needs.
    pub fn resolve_plan(&mut self) -> Result<ExperimentPlan, ConfigError> {
        let plan = match (&self.plan, &self.plan_file) {
            (Some(_), Some(_)) => {
                return Err(ConfigError::at(
                    "plan_file",
                    "give either `plan` or `plan_file`, not both",
                ))
            }
            (None, None) => return Err(ConfigError::at("plan", "no plan given")),
            (Some(p), None) => {
                p.validate().map_err(|e| plan_error(&e))?;
                p.clone()
            }
            (None, Some(path)) => load_plan(path)?,
        };
        self.plan = Some(plan.clone());
        self.plan_file = None;
        for (name, profile) in &self.profiles {
            profile
                .validate(name)
                .map_err(|e| ConfigError::at(format!("profiles.{name}"), e.to_string()))?;
        }
        let b = &self.broker;
        for (key, v) in [
            ("broker.register_timeout_s", b.register_timeout_s),
            ("broker.ready_timeout_s", b.ready_timeout_s),
            ("broker.tick_timeout_s", b.tick_timeout_s),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::at(key, "must be a positive number of seconds"));
            }
        }
        for (i, role) in self.agents.iter().enumerate() {
            role.validate()
                .map_err(|e| ConfigError::at(format!("agents[{i}]"), e))?;
        }
        Ok(plan)
    }

    /// Profile used to simulate `plan`: the plan's `sim_profile`, else the
    /// deployment's short name.
    pub fn profile_for(&self, plan: &ExperimentPlan) -> Result<SimProfile, ConfigError> {
        let name = plan
            .sim_profile
            .clone()
            .unwrap_or_else(|| plan.deployment.kind.short().to_owned());
        if let Some(p) = self.profiles.get(&name) {
            return Ok(p.clone());
        }
        SimProfile::builtin()
            .remove(&name)
            .ok_or_else(|| ConfigError::at("plan.sim_profile", format!("unknown simulation profile `{name}`")))
    }

    pub fn controller_config(&self, run_id: &str) -> ControllerConfig {
        let b = &self.broker;
        let mut c = ControllerConfig::new(run_id);
        c.register_timeout = Duration::from_secs_f64(b.register_timeout_s);
        c.ready_timeout = Duration::from_secs_f64(b.ready_timeout_s);
        c.tick_timeout = Duration::from_secs_f64(b.tick_timeout_s);
        c.liveness_ticks = b.liveness_ticks;
        if let Ok(text) = toml::to_string(self) {
            c.host_metadata.insert("config".into(), text);
        }
        c
    }

    /// Agents to wait for; defaults to one meter and one load agent.
    pub fn expected_agents(&self, plan: &ExperimentPlan) -> Vec<AgentRole> {
        if self.agents.is_empty() {
            crate::session::expected_roles(plan)
        } else {
            self.agents.clone()
        }
    }
}

impl AgentSection {
    /// Builds the configured drivers. Fails on anything that cannot work,
    /// such as a traffic generator missing from `PATH`.
    pub fn build(&self) -> Result<(AgentConfig, AgentDrivers), ConfigError> {
        let mut samplers: Vec<Box<dyn Sampler>> = Vec::new();
        let mut loads: Vec<Box<dyn LoadDriver>> = Vec::new();
        let mut caps = BTreeSet::new();
        if let Some(p) = &self.plug {
            if p.endpoint.is_empty() {
                return Err(ConfigError::at("agent.plug.endpoint", "must not be empty"));
            }
            samplers.push(Box::new(PlugClient::new(&p.id, &p.endpoint, p.timeout_ms)));
            caps.insert("power".to_owned());
        }
        if let Some(r) = &self.rapl {
            let mut meter = CounterMeter::new(&r.id, &r.root, r.domains.clone());
            if let Some(ceiling) = r.ceiling_mw {
                meter = meter.with_ceiling(ceiling);
            }
            match r.idle_floor_mw {
                Some(floor) if !(floor >= 0.0) => {
                    return Err(ConfigError::at("agent.rapl.idle_floor_mw", "must be non-negative"))
                }
                Some(floor) => {
                    samplers.push(Box::new(ProcessAttributionSampler::new(
                        Box::new(meter),
                        ProcessScanner::new(&r.proc_root),
                        floor,
                    )));
                    caps.insert("process".to_owned());
                }
                None => samplers.push(Box::new(meter)),
            }
            caps.insert("power".to_owned());
        }
        if let Some(n) = &self.net {
            if n.interfaces.is_empty() {
                return Err(ConfigError::at("agent.net.interfaces", "list at least one interface"));
            }
            samplers.push(Box::new(NetSampler::new(&n.root, n.interfaces.clone())));
            caps.insert("throughput".to_owned());
        }
        if let Some(c) = &self.cpu {
            samplers.push(Box::new(ProcStatSampler::new(&c.source, &c.proc_root)));
            caps.insert("cpu".to_owned());
        }
        if let Some(t) = &self.traffic {
            let driver =
                ExternalTrafficDriver::new(t.clone()).map_err(|e| ConfigError::at("agent.traffic", e.to_string()))?;
            loads.push(Box::new(driver));
            caps.insert("traffic".to_owned());
        }
        if let Some(s) = &self.stress {
            loads.push(Box::new(match s.cores {
                Some(0) => return Err(ConfigError::at("agent.stress.cores", "must be at least 1")),
                Some(n) => CpuStressDriver::with_cores(n),
                None => CpuStressDriver::new(),
            }));
            caps.insert("cpu".to_owned());
        }
        let s = &self.settle;
        if !(s.tolerance > 0.0) || s.consecutive == 0 || s.max_checks < s.consecutive {
            return Err(ConfigError::at(
                "agent.settle",
                "tolerance must be positive and max_checks at least consecutive",
            ));
        }
        let capabilities = self.capabilities.clone().unwrap_or(caps);
        let role = AgentRole {
            role: self.role,
            capabilities,
        };
        role.validate().map_err(|e| ConfigError::at("agent.capabilities", e))?;
        let mut config = AgentConfig::new(&self.id, role);
        config.run_id = self.run_id.clone();
        config.settle = (&self.settle).into();
        Ok((config, AgentDrivers { samplers, loads }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, toml::de::Error> {
        toml::from_str(text)
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse("[broker]\naddress = \"x:1\"\nport = 3\n").is_err());
        assert!(parse("colour = 1\n").is_err());
    }

    #[test]
    fn inline_plan_resolves() {
        let mut c = parse(
            r#"
[plan]
plan_id = "p"
deployment = { kind = "BareMetal" }
phases = [{ kind = "idle", duration_s = 30 }, { kind = "traffic", target_mbps = 100, duration_s = 30 }]
"#,
        )
        .unwrap();
        let plan = c.resolve_plan().unwrap();
        assert_eq!(plan.phases.len(), 2);
        assert_eq!(c.profile_for(&plan).unwrap().alpha, 4.63977);
    }

    #[test]
    fn missing_profile_is_named() {
        let mut c = RunConfig::default();
        let mut plan = ExperimentPlan::traffic_sweep(
            "p",
            crate::telemetry::Deployment {
                kind: crate::telemetry::DeploymentKind::Container,
                software: "x".into(),
            },
            100.0,
            1,
            1.0,
        );
        plan.sim_profile = Some("edge-box".into());
        c.plan = Some(plan.clone());
        c.resolve_plan().unwrap();
        let err = c.profile_for(&plan).unwrap_err();
        assert!(err.to_string().contains("edge-box"), "{err}");
    }

    #[test]
    fn agent_capabilities_follow_drivers() {
        let section: AgentSection = toml::from_str(
            r#"
id = "nuc1"
role = "meter_agent"
plug = { endpoint = "127.0.0.1:9999" }
cpu = {}
"#,
        )
        .unwrap();
        let (config, drivers) = section.build().unwrap();
        assert_eq!(drivers.samplers.len(), 2);
        let caps: Vec<&str> = config.role.capabilities.iter().map(String::as_str).collect();
        assert_eq!(caps, vec!["cpu", "power"]);
    }

    #[test]
    fn missing_generator_fails_before_start() {
        let section: AgentSection = toml::from_str(
            r#"
id = "ue"
role = "load_agent"
traffic = { command = ["surely-not-installed-generator", "{rate_bps}"], parser = { kind = "iperf3_text" } }
"#,
        )
        .unwrap();
        let err = section.build().err().unwrap();
        assert_eq!(err.field.as_deref(), Some("agent.traffic"));
    }
}
