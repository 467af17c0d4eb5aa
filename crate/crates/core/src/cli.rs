//! The `edgewatt` command line.
//!
//! Exit codes: 0 on success, 1 on configuration or input errors, 2 when a
//! run ends incomplete (its partial trace is still written).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use crate::analysis::{build_report, cpu_samples, fit_cpu_power_curve, fit_run_offset, write_report, AnalysisOptions};
use crate::attribution::GroupRule;
use crate::clock::{CancelToken, SystemClock};
use crate::config::{ConfigError, RunConfig};
use crate::control::{run_agent, run_controller, AgentExit, TcpBroker, TcpBrokerServer, BROKER_ENV};
use crate::ingest::ingest;
use crate::meters::{MockPlug, MockPlugBehavior};
use crate::session::{simulate, SimulationOptions};
use crate::telemetry::{export_flat, read_trace, write_trace, RunStatus, TraceRun};

#[derive(Parser, Debug)]
#[command(
    name = "edgewatt",
    version,
    about = "Power measurement experiments for softwarized network cores"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run an experiment plan as controller, or fully simulated.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Plan file; overrides the config's plan.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Use in-process simulated agents instead of a broker.
        #[arg(long)]
        simulate: bool,
        /// With --simulate, run on the wall clock instead of compressed time.
        #[arg(long, requires = "simulate")]
        realtime: bool,
        /// Overrides the simulation profile's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        run_id: Option<String>,
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = BROKER_ENV)]
        broker: Option<String>,
    },
    /// Join a broker as an agent and serve one run.
    Agent {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = BROKER_ENV)]
        broker: Option<String>,
    },
    /// Run a TCP broker.
    Broker {
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
    },
    /// Fit a model to one or more traces and print it as JSON.
    Fit {
        #[arg(long, value_enum, default_value = "offset")]
        model: ModelKind,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
    /// Summary, overhead and energy-per-bit tables for a set of traces.
    Report {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        traces: Vec<PathBuf>,
    },
    /// Convert CSV measurements into traces using an adapter file.
    Ingest {
        #[arg(long)]
        adapter: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run the analysis of a stored trace.
    Replay {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        trace: PathBuf,
    },
    /// Serve a fixed reading over the plug protocol, for testing.
    MockPlug {
        #[arg(long, default_value = "127.0.0.1:8089")]
        listen: String,
        #[arg(long)]
        milliwatts: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Offset,
    Cpu,
}

/// Failure classes that map onto exit codes.
#[derive(Debug)]
enum Failure {
    Config(ConfigError),
    Other(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn cancel_on_signal() -> CancelToken {
    let cancel = CancelToken::new();
    let c = cancel.clone();
    if let Err(e) = ctrlc::set_handler(move || c.cancel()) {
        log::warn!("cannot install signal handler: {e}");
    }
    cancel
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, ConfigError> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn analysis_settings(config: Option<&Path>) -> Result<(AnalysisOptions, Vec<GroupRule>), ConfigError> {
    let c = load_config(config)?;
    Ok((c.analysis, c.groups))
}

fn read_traces(paths: &[PathBuf]) -> anyhow::Result<Vec<TraceRun>> {
    paths
        .iter()
        .map(|p| read_trace(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

fn execute(command: Command) -> Result<u8, Failure> {
    match command {
        Command::Run {
            config,
            plan,
            simulate: simulated,
            realtime,
            seed,
            run_id,
            out,
            broker,
        } => {
            let mut config = load_config(config.as_deref())?.with_plan_file(plan);
            let plan = config.resolve_plan()?;
            if let Some(addr) = broker {
                config.broker.address = addr;
            }
            let out = out.unwrap_or_else(|| config.output.dir.clone());
            let run = if simulated {
                let profile = config.profile_for(&plan)?;
                let options = SimulationOptions {
                    seed,
                    run_id,
                    realtime,
                    faults: None,
                    controller: Some(config.controller_config("")),
                };
                simulate(&plan, &profile, options).context("simulated run")?
            } else {
                let cancel = cancel_on_signal();
                let address = config.broker_address();
                let broker = TcpBroker::connect(&address).with_context(|| format!("broker at {address}"))?;
                let clock = SystemClock;
                let run_id =
                    run_id.unwrap_or_else(|| format!("{}-{}", plan.plan_id, crate::clock::Clock::now_ms(&clock)));
                let expected = config.expected_agents(&plan);
                run_controller(
                    &plan,
                    broker.as_ref(),
                    &expected,
                    &clock,
                    config.controller_config(&run_id),
                    &cancel,
                )
                .context("controller")?
            };
            write_outputs(&run, &config.analysis, &config.groups, &out)?;
            Ok(match run.status {
                RunStatus::Complete => 0,
                RunStatus::Incomplete { reason } => {
                    eprintln!("run incomplete: {reason}");
                    2
                }
            })
        }
        Command::Agent { config, broker } => {
            let config = RunConfig::load(&config)?;
            let section = config
                .agent
                .as_ref()
                .ok_or_else(|| ConfigError::at("agent", "an agent section is required"))?;
            let (agent_config, drivers) = section.build()?;
            let address = broker.unwrap_or_else(|| config.broker_address());
            let broker = TcpBroker::connect(&address).with_context(|| format!("broker at {address}"))?;
            let exit = run_agent(agent_config, broker, drivers, Arc::new(SystemClock), cancel_on_signal());
            Ok(match exit {
                AgentExit::Completed(RunStatus::Complete) | AgentExit::Cancelled => 0,
                AgentExit::Completed(RunStatus::Incomplete { reason }) | AgentExit::Aborted(reason) => {
                    eprintln!("run incomplete: {reason}");
                    2
                }
                AgentExit::Failed(reason) => {
                    eprintln!("agent failed: {reason}");
                    1
                }
            })
        }
        Command::Broker { listen } => {
            let server = TcpBrokerServer::bind(&listen).with_context(|| format!("binding {listen}"))?;
            println!("broker listening on {}", server.local_addr());
            let cancel = cancel_on_signal();
            while !cancel.is_cancelled() {
                std::thread::sleep(Duration::from_millis(100));
            }
            server.shutdown();
            Ok(0)
        }
        Command::Fit {
            model,
            config,
            out,
            traces,
        } => {
            let (options, _) = analysis_settings(config.as_deref())?;
            let runs = read_traces(&traces)?;
            let mut docs = Vec::new();
            for run in &runs {
                let model = match model {
                    ModelKind::Offset => {
                        serde_json::to_value(fit_run_offset(run, &options).map_err(anyhow::Error::from)?)
                    }
                    ModelKind::Cpu => {
                        let samples = cpu_samples(run, &options.meters).map_err(anyhow::Error::from)?;
                        serde_json::to_value(fit_cpu_power_curve(&samples).map_err(anyhow::Error::from)?)
                    }
                }
                .map_err(anyhow::Error::from)?;
                docs.push(serde_json::json!({ "run_id": run.run_id, "model": model }));
            }
            let mut text = serde_json::to_string_pretty(&docs).map_err(anyhow::Error::from)?;
            text.push('\n');
            match out {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
            Ok(0)
        }
        Command::Report { config, out, traces } => {
            let (options, groups) = analysis_settings(config.as_deref())?;
            let runs = read_traces(&traces)?;
            let report = build_report(&runs, &options, &groups).map_err(anyhow::Error::from)?;
            write_report(&runs, &report, &options, &out)?;
            Ok(0)
        }
        Command::Ingest { adapter, out } => {
            let runs = ingest(&adapter).map_err(anyhow::Error::from)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for run in &runs {
                let path = out.join(format!("{}.jsonl", run.run_id));
                write_trace(run, &path).with_context(|| format!("writing {}", path.display()))?;
                println!("{}", path.display());
            }
            Ok(0)
        }
        Command::Replay { config, out, trace } => {
            let (options, groups) = analysis_settings(config.as_deref())?;
            let run = read_trace(&trace).with_context(|| format!("reading {}", trace.display()))?;
            run.validate().map_err(anyhow::Error::from)?;
            let runs = [run];
            let report = build_report(&runs, &options, &groups).map_err(anyhow::Error::from)?;
            write_report(&runs, &report, &options, &out)?;
            Ok(0)
        }
        Command::MockPlug { listen, milliwatts } => {
            let plug = MockPlug::start(&listen, MockPlugBehavior::Fixed(milliwatts))
                .with_context(|| format!("binding {listen}"))?;
            println!("mock plug listening on {}", plug.endpoint());
            let cancel = cancel_on_signal();
            while !cancel.is_cancelled() {
                std::thread::sleep(Duration::from_millis(100));
            }
            Ok(0)
        }
    }
}

/// Writes `trace.jsonl`, `trace.csv` and `report/` under `out`.
pub fn write_outputs(
    run: &TraceRun,
    options: &AnalysisOptions,
    groups: &[GroupRule],
    out: &Path,
) -> anyhow::Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_trace(run, &out.join("trace.jsonl"))?;
    if let Err(e) = export_flat(run, &out.join("trace.csv")) {
        log::warn!("flat export skipped: {e:#}");
    }
    let runs = std::slice::from_ref(run);
    match build_report(runs, options, groups) {
        Ok(report) => write_report(runs, &report, options, &out.join("report"))?,
        Err(e) => log::warn!("report skipped: {e}"),
    }
    Ok(())
}
