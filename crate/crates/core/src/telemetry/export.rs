//! Flat comma-separated export: one aligned row per tick.
//!
//! Derived from a trace, never read back as a source of truth.

use std::path::Path;

use super::{align, AlignError, Stream, TraceRun};

#[derive(Clone, Debug, PartialEq)]
pub struct FlatTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Aligns every power, throughput and CPU stream of `run` at the plan's period.
pub fn flat_table(run: &TraceRun) -> Result<FlatTable, AlignError> {
    let mut streams: Vec<Stream> = Vec::new();
    let mut push = |name: String, t: i64, v: f64| match streams.iter_mut().find(|s| s.name == name) {
        Some(s) => s.points.push((t, v)),
        None => streams.push(Stream::new(name, vec![(t, v)])),
    };
    for s in &run.power {
        push(format!("{}/{}_mw", s.source, s.scope), s.timestamp_ms, s.power_mw);
    }
    for s in &run.throughput {
        push(
            format!("{}/{}_mbps", s.interface, s.direction),
            s.timestamp_ms,
            s.mbps(),
        );
    }
    for s in &run.cpu {
        push(format!("{}/cpu_util", s.source), s.timestamp_ms, s.utilization);
    }
    let rows = align(&streams, run.plan.sample_period_ms)?;

    let mut columns = vec!["tick_ms".to_owned(), "phase".to_owned()];
    columns.extend(streams.iter().map(|s| s.name.clone()));
    let rows = rows
        .into_iter()
        .map(|row| {
            let phase = run
                .phase_at(row.tick_ms)
                .map(|m| m.index.to_string())
                .unwrap_or_default();
            let mut out = vec![row.tick_ms.to_string(), phase];
            out.extend(row.values.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            out
        })
        .collect();
    Ok(FlatTable { columns, rows })
}

pub fn export_flat(run: &TraceRun, destination: &Path) -> anyhow::Result<()> {
    let table = flat_table(run)?;
    let mut w = csv::Writer::from_path(destination)?;
    w.write_record(&table.columns)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}
