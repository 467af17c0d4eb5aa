//! Adapter for external traffic-generator processes.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{DriverError, LoadDriver, PhaseTarget};
use crate::telemetry::PhaseKind;

/// Splits a phase rate across `ue_count` senders in whole bits per second.
/// The remainder goes to the first sender so the parts sum to the target.
pub fn split_rate(target_mbps: f64, ue_count: u32) -> Vec<u64> {
    let n = u64::from(ue_count.max(1));
    let total = (target_mbps * 1e6).round().max(0.0) as u64;
    let mut rates = vec![total / n; n as usize];
    rates[0] += total % n;
    rates
}

/// How achieved rates are read from a generator's output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateParser {
    /// Interval lines of iperf-style text output, e.g. `99.6 Mbits/sec`.
    Iperf3Text,
    /// First capture group is the rate in `unit` (bps, kbps, mbps, gbps).
    Regex { pattern: String, unit: String },
}

fn unit_scale(unit: &str) -> Option<f64> {
    match unit.to_ascii_lowercase().as_str() {
        "" | "bps" | "bits" => Some(1.0),
        "k" | "kbps" | "kbits" => Some(1e3),
        "m" | "mbps" | "mbits" => Some(1e6),
        "g" | "gbps" | "gbits" => Some(1e9),
        _ => None,
    }
}

/// Rate in Mbps from one output line, if it carries one.
pub fn parse_rate_line(parser: &RateParser, line: &str) -> Result<Option<f64>, DriverError> {
    match parser {
        RateParser::Iperf3Text => {
            if line.contains("sender") || line.contains("receiver") {
                return Ok(None);
            }
            static_iperf()
                .captures(line)
                .map(|c| {
                    let v: f64 = c[1]
                        .parse()
                        .map_err(|_| DriverError::Failed(format!("bad rate in {line:?}")))?;
                    Ok(v * unit_scale(&c[2]).unwrap_or(1.0) / 1e6)
                })
                .transpose()
        }
        RateParser::Regex { pattern, unit } => {
            let re = Regex::new(pattern).map_err(|e| DriverError::Config(e.to_string()))?;
            let scale = unit_scale(unit).ok_or_else(|| DriverError::Config(format!("unknown rate unit `{unit}`")))?;
            re.captures(line)
                .and_then(|c| c.get(1))
                .map(|m| {
                    m.as_str()
                        .parse::<f64>()
                        .map(|v| v * scale / 1e6)
                        .map_err(|_| DriverError::Failed(format!("bad rate in {line:?}")))
                })
                .transpose()
        }
    }
}

fn static_iperf() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"([0-9]+(?:\.[0-9]+)?)\s+([KMG]?)bits/sec").expect("static pattern"))
}

/// One external generator: argv template plus output parser.
///
/// Placeholders: `{rate_bps}`, `{rate_mbps}`, `{duration_s}`, `{ue_index}`,
/// `{server}`, `{port}`. Sender `i` gets `port_base + i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub command: Vec<String>,
    pub parser: RateParser,
    #[serde(default)]
    pub server: String,
    #[serde(default = "default_port")]
    pub port_base: u16,
}

fn default_port() -> u16 {
    5201
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemplateVars {
    pub rate_bps: u64,
    pub duration_s: f64,
    pub ue_index: u32,
    pub server: String,
    pub port: u16,
}

impl GeneratorConfig {
    pub fn render(&self, vars: &TemplateVars) -> Vec<String> {
        self.command
            .iter()
            .map(|arg| {
                arg.replace("{rate_bps}", &vars.rate_bps.to_string())
                    .replace("{rate_mbps}", &(vars.rate_bps as f64 / 1e6).to_string())
                    .replace("{duration_s}", &vars.duration_s.ceil().to_string())
                    .replace("{ue_index}", &vars.ue_index.to_string())
                    .replace("{server}", &vars.server)
                    .replace("{port}", &vars.port.to_string())
            })
            .collect()
    }

    /// Resolves the program against `PATH`; fails before any phase starts.
    pub fn validate(&self) -> Result<PathBuf, DriverError> {
        let program = self
            .command
            .first()
            .ok_or_else(|| DriverError::Config("generator command is empty".into()))?;
        if let RateParser::Regex { pattern, unit } = &self.parser {
            Regex::new(pattern).map_err(|e| DriverError::Config(format!("parser pattern: {e}")))?;
            unit_scale(unit).ok_or_else(|| DriverError::Config(format!("unknown rate unit `{unit}`")))?;
        }
        find_program(program).ok_or_else(|| DriverError::Config(format!("generator binary `{program}` not found")))
    }
}

fn find_program(program: &str) -> Option<PathBuf> {
    let p = Path::new(program);
    if p.components().count() > 1 {
        return p.is_file().then(|| p.to_path_buf());
    }
    std::env::var_os("PATH").and_then(|paths| {
        std::env::split_paths(&paths)
            .map(|d| d.join(program))
            .find(|c| c.is_file())
    })
}

struct Sender {
    child: Child,
    reader: Option<JoinHandle<()>>,
}

/// Launches one generator process per UE and sums their reported rates.
pub struct ExternalTrafficDriver {
    config: GeneratorConfig,
    senders: Vec<Sender>,
    rates: Arc<Mutex<Vec<Option<f64>>>>,
}

impl ExternalTrafficDriver {
    pub fn new(config: GeneratorConfig) -> Result<Self, DriverError> {
        config.validate()?;
        Ok(Self {
            config,
            senders: Vec::new(),
            rates: Arc::new(Mutex::new(Vec::new())),
        })
    }
}

impl LoadDriver for ExternalTrafficDriver {
    fn name(&self) -> &str {
        "traffic"
    }

    fn capabilities(&self) -> Vec<String> {
        vec!["traffic".into()]
    }

    fn handles(&self, kind: &PhaseKind) -> bool {
        matches!(kind, PhaseKind::Traffic { .. })
    }

    fn start(&mut self, target: &PhaseTarget) -> Result<(), DriverError> {
        self.stop()?;
        let rates = split_rate(target.value(), target.ue_count);
        *self.rates.lock().expect("rates lock") = vec![None; rates.len()];
        for (i, rate_bps) in rates.into_iter().enumerate() {
            let argv = self.config.render(&TemplateVars {
                rate_bps,
                duration_s: target.duration_s,
                ue_index: i as u32,
                server: self.config.server.clone(),
                port: self.config.port_base.saturating_add(i as u16),
            });
            let mut child = Command::new(&argv[0])
                .args(&argv[1..])
                .stdin(Stdio::null())
                .stdout(Stdio::piped())
                .stderr(Stdio::null())
                .spawn()
                .map_err(|e| DriverError::Failed(format!("spawning `{}`: {e}", argv[0])))?;
            let stdout = child.stdout.take().expect("piped stdout");
            let (parser, shared) = (self.config.parser.clone(), Arc::clone(&self.rates));
            let reader = std::thread::spawn(move || {
                for line in BufReader::new(stdout).lines().map_while(Result::ok) {
                    match parse_rate_line(&parser, &line) {
                        Ok(Some(mbps)) => {
                            if let Some(slot) = shared.lock().expect("rates lock").get_mut(i) {
                                *slot = Some(mbps);
                            }
                        }
                        Ok(None) => {}
                        Err(e) => log::debug!("sender {i}: {e}"),
                    }
                }
            });
            self.senders.push(Sender {
                child,
                reader: Some(reader),
            });
        }
        Ok(())
    }

    fn achieved(&mut self) -> Result<Option<f64>, DriverError> {
        let rates = self.rates.lock().expect("rates lock");
        Ok(Some(rates.iter().map(|r| r.unwrap_or(0.0)).sum()))
    }

    fn stop(&mut self) -> Result<(), DriverError> {
        for mut s in self.senders.drain(..) {
            let _ = s.child.kill();
            let _ = s.child.wait();
            if let Some(h) = s.reader.take() {
                let _ = h.join();
            }
        }
        Ok(())
    }
}

impl Drop for ExternalTrafficDriver {
    fn drop(&mut self) {
        let _ = self.stop();
    }
}
