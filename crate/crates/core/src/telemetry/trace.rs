//! Line-delimited trace files.
//!
//! Line 1 is a header record carrying the schema version, the plan, run
//! status and host metadata. Every following line is one self-describing
//! record tagged by its `record` field. The layout is documented in
//! `docs/trace-format.md`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    CpuSample, ExperimentPlan, Flag, GapEvent, InvariantError, MeterDescriptor, PhaseMark, PowerSample, RunStatus,
    ThroughputSample, TimestampMs, TraceRun,
};
use crate::attribution::AttributionRecord;

pub const SCHEMA_VERSION: &str = "edgewatt-trace/1";

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("unsupported trace schema `{found}` (expected `{expected}`)")]
    SchemaVersion { found: String, expected: &'static str },
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: invalid record: {source}")]
    Invalid {
        line: usize,
        #[source]
        source: InvariantError,
    },
    #[error("trace is empty or has no header")]
    MissingHeader,
    #[error("trace violates run invariants: {0}")]
    Run(InvariantError),
    #[error("serialization failed: {0}")]
    Encode(#[from] serde_json::Error),
}

impl TraceError {
    /// Offending field for invariant violations.
    pub fn field_name(&self) -> Option<&'static str> {
        match self {
            TraceError::Invalid { source, .. } | TraceError::Run(source) => source.field_name(),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct Header {
    pub schema: String,
    pub run_id: String,
    #[serde(flatten)]
    pub status: RunStatus,
    pub start_ms: TimestampMs,
    pub end_ms: TimestampMs,
    pub plan: ExperimentPlan,
    pub meters: Vec<MeterDescriptor>,
    pub host_metadata: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub(crate) enum Record {
    Header(Header),
    Phase(PhaseMark),
    Power(PowerSample),
    Throughput(ThroughputSample),
    Cpu(CpuSample),
    Attribution(AttributionRecord),
    Gap(GapEvent),
    Flag(Flag),
}

/// Single-writer, append-only trace sink.
pub struct TraceWriter<W: Write> {
    out: W,
}

impl TraceWriter<BufWriter<File>> {
    pub fn create(path: &Path, run: &TraceRun) -> Result<Self, TraceError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        Self::new(BufWriter::new(File::create(path)?), run)
    }
}

impl<W: Write> TraceWriter<W> {
    /// Writes the header taken from `run`; streams are appended afterwards.
    pub fn new(out: W, run: &TraceRun) -> Result<Self, TraceError> {
        let mut w = Self { out };
        w.write_record(&Record::Header(Header {
            schema: SCHEMA_VERSION.to_owned(),
            run_id: run.run_id.clone(),
            status: run.status.clone(),
            start_ms: run.start_ms,
            end_ms: run.end_ms,
            plan: run.plan.clone(),
            meters: run.meters.clone(),
            host_metadata: run.host_metadata.clone(),
        }))?;
        Ok(w)
    }

    fn write_record(&mut self, record: &Record) -> Result<(), TraceError> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn append_power(&mut self, s: &PowerSample) -> Result<(), TraceError> {
        self.write_record(&Record::Power(s.clone()))
    }

    pub fn append_throughput(&mut self, s: &ThroughputSample) -> Result<(), TraceError> {
        self.write_record(&Record::Throughput(s.clone()))
    }

    pub fn append_cpu(&mut self, s: &CpuSample) -> Result<(), TraceError> {
        self.write_record(&Record::Cpu(s.clone()))
    }

    pub fn append_attribution(&mut self, r: &AttributionRecord) -> Result<(), TraceError> {
        self.write_record(&Record::Attribution(r.clone()))
    }

    pub fn append_phase(&mut self, m: &PhaseMark) -> Result<(), TraceError> {
        self.write_record(&Record::Phase(m.clone()))
    }

    pub fn append_gap(&mut self, g: &GapEvent) -> Result<(), TraceError> {
        self.write_record(&Record::Gap(g.clone()))
    }

    pub fn append_flag(&mut self, f: &Flag) -> Result<(), TraceError> {
        self.write_record(&Record::Flag(f.clone()))
    }

    pub fn finish(mut self) -> Result<W, TraceError> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Serializes a whole run into `out`.
pub fn write_trace_to<W: Write>(run: &TraceRun, out: W) -> Result<W, TraceError> {
    let mut w = TraceWriter::new(out, run)?;
    for m in &run.phase_marks {
        w.append_phase(m)?;
    }
    for s in &run.power {
        w.append_power(s)?;
    }
    for s in &run.throughput {
        w.append_throughput(s)?;
    }
    for s in &run.cpu {
        w.append_cpu(s)?;
    }
    for r in &run.attribution {
        w.append_attribution(r)?;
    }
    for g in &run.gaps {
        w.append_gap(g)?;
    }
    for f in &run.flags {
        w.append_flag(f)?;
    }
    w.finish()
}

pub fn write_trace(run: &TraceRun, destination: &Path) -> Result<(), TraceError> {
    if let Some(dir) = destination.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = BufWriter::new(File::create(destination)?);
    write_trace_to(run, file)?;
    Ok(())
}

pub fn read_trace(source: &Path) -> Result<TraceRun, TraceError> {
    read_trace_from(BufReader::new(File::open(source)?))
}

pub fn read_trace_from<R: BufRead>(input: R) -> Result<TraceRun, TraceError> {
    let mut lines = input.lines().enumerate();
    let header = loop {
        let Some((i, line)) = lines.next() else {
            return Err(TraceError::MissingHeader);
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        break parse_header(i + 1, &line)?;
    };

    let mut run = TraceRun::new(header.run_id, header.plan, header.start_ms);
    run.end_ms = header.end_ms;
    run.status = header.status;
    run.meters = header.meters;
    run.host_metadata = header.host_metadata;

    for (i, line) in lines {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| TraceError::Malformed {
            line: lineno,
            reason: e.to_string(),
        })?;
        let invalid = |source| TraceError::Invalid { line: lineno, source };
        match record {
            Record::Header(_) => {
                return Err(TraceError::Malformed {
                    line: lineno,
                    reason: "second header record".into(),
                })
            }
            Record::Phase(m) => run.phase_marks.push(m),
            Record::Power(s) => {
                s.validate().map_err(invalid)?;
                run.power.push(s);
            }
            Record::Throughput(s) => {
                s.validate().map_err(invalid)?;
                run.throughput.push(s);
            }
            Record::Cpu(s) => {
                s.validate().map_err(invalid)?;
                run.cpu.push(s);
            }
            Record::Attribution(r) => {
                r.validate().map_err(invalid)?;
                run.attribution.push(r);
            }
            Record::Gap(g) => run.gaps.push(g),
            Record::Flag(f) => run.flags.push(f),
        }
    }
    run.validate().map_err(TraceError::Run)?;
    Ok(run)
}

fn parse_header(line: usize, text: &str) -> Result<Header, TraceError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| TraceError::Malformed {
        line,
        reason: e.to_string(),
    })?;
    if value.get("record").and_then(|r| r.as_str()) != Some("header") {
        return Err(TraceError::MissingHeader);
    }
    let schema = value.get("schema").and_then(|s| s.as_str()).unwrap_or("<missing>");
    if schema != SCHEMA_VERSION {
        return Err(TraceError::SchemaVersion {
            found: schema.to_owned(),
            expected: SCHEMA_VERSION,
        });
    }
    match serde_json::from_value::<Record>(value) {
        Ok(Record::Header(h)) => Ok(h),
        Ok(_) => Err(TraceError::MissingHeader),
        Err(e) => Err(TraceError::Malformed {
            line,
            reason: e.to_string(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::{Deployment, DeploymentKind, MeterId, Scope};
    use std::io::Cursor;

    fn small_run() -> TraceRun {
        let plan = ExperimentPlan::traffic_sweep(
            "p",
            Deployment {
                kind: DeploymentKind::Container,
                software: "open5gs".into(),
            },
            100.0,
            1,
            2.0,
        );
        let mut run = TraceRun::new("run-1", plan, 1_000);
        run.end_ms = 5_000;
        run.meters.push(MeterDescriptor::hardware_plug("plug"));
        run.host_metadata.insert("hardware".into(), "nuc".into());
        for (i, p) in [12_500.0, 12_600.25, 0.1].into_iter().enumerate() {
            run.power.push(PowerSample::new(
                2_000 + i as i64 * 1000,
                MeterId::new("plug"),
                Scope::Host,
                p,
            ));
        }
        run
    }

    fn to_string(run: &TraceRun) -> String {
        String::from_utf8(write_trace_to(run, Vec::new()).unwrap()).unwrap()
    }

    #[test]
    fn three_sample_round_trip() {
        let run = small_run();
        let text = to_string(&run);
        let back = read_trace_from(Cursor::new(text)).unwrap();
        assert_eq!(back, run);
    }

    #[test]
    fn header_comes_first() {
        let text = to_string(&small_run());
        let first = text.lines().next().unwrap();
        assert!(first.contains("\"record\":\"header\""));
        assert!(first.contains(SCHEMA_VERSION));
    }

    #[test]
    fn negative_power_names_the_field() {
        let text = to_string(&small_run()).replace("12600.25", "-3.0");
        let err = read_trace_from(Cursor::new(text)).unwrap_err();
        assert!(matches!(err, TraceError::Invalid { line: 3, .. }), "{err}");
        assert_eq!(err.field_name(), Some("power_mw"));
    }

    #[test]
    fn schema_mismatch_is_versioned_error() {
        let text = to_string(&small_run()).replace(SCHEMA_VERSION, "edgewatt-trace/0");
        match read_trace_from(Cursor::new(text)).unwrap_err() {
            TraceError::SchemaVersion { found, .. } => assert_eq!(found, "edgewatt-trace/0"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_row_names_line_number() {
        let mut text = to_string(&small_run());
        text.push_str("{\"record\":\"power\",\"oops\":1}\n");
        let lines = text.lines().count();
        match read_trace_from(Cursor::new(text)).unwrap_err() {
            TraceError::Malformed { line, .. } => assert_eq!(line, lines),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_input_has_no_header() {
        assert!(matches!(
            read_trace_from(Cursor::new("")).unwrap_err(),
            TraceError::MissingHeader
        ));
    }
}
