use thiserror::Error;

use super::TimestampMs;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("nothing to align")]
    Empty,
    #[error("stream `{stream}` is not time-ordered at index {index}")]
    Unordered { stream: String, index: usize },
    #[error("alignment period must be positive")]
    ZeroPeriod,
}

/// One named, time-ordered series of values.
#[derive(Clone, Debug, PartialEq)]
pub struct Stream {
    pub name: String,
    pub points: Vec<(TimestampMs, f64)>,
}

impl Stream {
    pub fn new(name: impl Into<String>, points: Vec<(TimestampMs, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
        }
    }
}

/// One sampling tick. `values[i]` is `None` where stream `i` had no sample
/// within half a period of the tick.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedRow {
    pub tick_ms: TimestampMs,
    pub values: Vec<Option<f64>>,
}

impl AlignedRow {
    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }
}

/// Nearest-neighbour alignment onto a fixed tick grid.
///
/// The grid starts at the earliest sample across all streams and is spaced
/// exactly `period_ms`. Each tick owns the half-open window
/// `[tick - period/2, tick + period/2)`; the sample in that window closest to
/// the tick is kept (earliest on ties). Values are never interpolated.
pub fn align(streams: &[Stream], period_ms: u64) -> Result<Vec<AlignedRow>, AlignError> {
    if period_ms == 0 {
        return Err(AlignError::ZeroPeriod);
    }
    for s in streams {
        if let Some(i) = s.points.windows(2).position(|w| w[1].0 < w[0].0) {
            return Err(AlignError::Unordered {
                stream: s.name.clone(),
                index: i + 1,
            });
        }
    }
    let origin = streams
        .iter()
        .filter_map(|s| s.points.first().map(|p| p.0))
        .min()
        .ok_or(AlignError::Empty)?;
    let period = period_ms as i64;
    // tick index k owns [origin + k*p - p/2, origin + k*p + p/2)
    let slot = |t: TimestampMs| (2 * (t - origin) + period).div_euclid(2 * period);
    let last_slot = streams
        .iter()
        .filter_map(|s| s.points.last().map(|p| slot(p.0)))
        .max()
        .unwrap_or(0);

    let n = (last_slot + 1) as usize;
    let mut rows: Vec<AlignedRow> = (0..n)
        .map(|k| AlignedRow {
            tick_ms: origin + k as i64 * period,
            values: vec![None; streams.len()],
        })
        .collect();
    let mut best: Vec<Vec<Option<i64>>> = vec![vec![None; streams.len()]; n];

    for (si, s) in streams.iter().enumerate() {
        for &(t, v) in &s.points {
            let k = slot(t) as usize;
            let dist = (t - rows[k].tick_ms).abs();
            match best[k][si] {
                Some(d) if d <= dist => {}
                _ => {
                    best[k][si] = Some(dist);
                    rows[k].values[si] = Some(v);
                }
            }
        }
    }
    Ok(rows)
}
